"""Command line entry point: ``isvi {fit,weight-decay,bench} --config FILE``."""
from __future__ import annotations

import argparse
import sys

from . import harness

_COMMANDS = {
    "fit": harness.cmd_fit,
    "weight-decay": harness.cmd_weight_decay,
    "bench": harness.cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isvi", description="Importance-sampled stochastic variational inference.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fit": "run one optimizer on one model",
        "weight-decay": "sweep factor sizes and record importance-weight decay",
        "bench": "compare optimizer variants by evaluations to an ELBO threshold",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("config error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return harness.EXIT_CONFIG
    log = lambda msg: print(msg, file=sys.stderr if msg.startswith(("config error", "runtime error")) else sys.stdout)
    return _COMMANDS[args.command](args.config, seed=args.seed, out=args.out, log=log)


if __name__ == "__main__":
    sys.exit(main())
