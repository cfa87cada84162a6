"""``abstain-bench`` command line."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, load_config
from .errors import AbstainBenchError
from .gradsuite import gradient_suite
from .runner import format_report, report, run

GRAD_TOLERANCE = 1e-4


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abstain-bench", description="Selective classification benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train, calibrate and evaluate the configured matrix")
    p_run.add_argument("--config", required=True, help="YAML benchmark config")
    p_run.add_argument("--mode", choices=MODES, help="override the config mode")
    p_run.add_argument("--jobs", type=int, help="worker processes")
    p_run.add_argument("--seed", type=int, help="global seed")
    p_run.add_argument("--out", help="output directory")

    p_rep = sub.add_parser("report", help="rank summary of a finished run")
    p_rep.add_argument("--in", dest="in_dir", required=True, help="results directory")
    p_rep.add_argument("--alpha", type=float, default=0.05, choices=(0.05, 0.10))

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p_grad.add_argument("--nets", type=int, default=20, help="random networks per loss")
    p_grad.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config, mode=args.mode, jobs=args.jobs, seed=args.seed, out=args.out)
            out = run(cfg)
            print(f"results written to {out}")
        elif args.command == "report":
            print(format_report(report(args.in_dir, args.alpha)), end="")
        else:
            worst = gradient_suite(args.nets, args.seed)
            failed = False
            for name, err in worst.items():
                ok = err < GRAD_TOLERANCE
                failed |= not ok
                print(f"{name:<10} max rel err {err:.3e}  {'ok' if ok else 'FAIL'}")
            return 1 if failed else 0
    except (AbstainBenchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
