"""Command-line entry point: ``parabolic-lab <experiment> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import load_config
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment

log = logging.getLogger("parabolic_lab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parabolic-lab", description=__doc__)
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--config", action="append", default=[], metavar="PATH",
                        help="config overlay(s) on top of the packaged defaults")
    parser.add_argument("--out", default="out", metavar="DIR")
    parser.add_argument("--cache", default=None, metavar="PATH", help="Shilnikov cache CSV")
    parser.add_argument("--threads", type=int, default=1, metavar="N")
    parser.add_argument("--seed", type=int, default=0, metavar="U64",
                        help="seed for randomised sampling")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not 0 <= args.seed < 2**64:
        print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    cfg = ExperimentConfig(
        name=args.experiment, lab=load_config(args.config), out_dir=args.out,
        cache_path=args.cache, threads=args.threads, seed=args.seed,
    )
    try:
        manifest = run_experiment(cfg)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for key in sorted(manifest.metrics):
        print(f"{key:32s} {manifest.metrics[key]!r}")
    for key in sorted(manifest.checks):
        print(f"{'PASS' if manifest.checks[key] else 'FAIL'} {key}")
    log.info("wall time %.1f s, artifacts in %s", manifest.wall_time, args.out)
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
