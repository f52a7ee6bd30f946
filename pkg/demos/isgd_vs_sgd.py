"""I-SGD against SGD on a 50-dimensional Gaussian model.

SGD runs until its full-data ELBO stops improving. Its best smoothed ELBO
minus one nat becomes the target, and both optimizers are scored by the
model-gradient evaluations they need to reach it. Takes about 20 seconds.

    python demos/isgd_vs_sgd.py
"""
from pathlib import Path

from isvi import harness

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    cfg = harness.load_config(CONFIGS / "bench_isgd.yaml", "bench")
    report = harness.bench(cfg)
    print(f"threshold ELBO {report['threshold']:.2f} (budget {report['budget_epochs']} epochs)")
    rows = {r["variant"]: r for r in report["rows"]}
    for label, row in rows.items():
        print(f"{label:>5}: {row['model_grad_evals_to_threshold']} model-gradient evaluations to threshold")
    ratio = rows["isgd"]["model_grad_evals_to_threshold"] / rows["sgd"]["model_grad_evals_to_threshold"]
    print(f"I-SGD needs {ratio:.2f} of SGD's evaluations")


if __name__ == "__main__":
    main()
