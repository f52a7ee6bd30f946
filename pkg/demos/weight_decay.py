"""How fast importance weights decay as factors grow.

Each factor of the approximation shares one importance weight, which is
a product over its coordinates. A single step moves every coordinate a
little, so a product over many coordinates collapses much faster than a
weight over one coordinate. The table shows the mean weight after each
reuse step (columns) for each factor size (rows).

    python demos/weight_decay.py
"""
from pathlib import Path

from isvi import harness

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    cfg = harness.load_config(CONFIGS / "weight_decay.yaml", "weight-decay")
    curves = harness.weight_decay_curves(cfg)
    steps = range(cfg.reuse_steps + 1)
    print("size " + "".join(f"{k:>8d}" for k in steps))
    for size, w in curves.items():
        print(f"{size:4d} " + "".join(f"{m:8.3f}" for m in w.mean(axis=0)))


if __name__ == "__main__":
    main()
