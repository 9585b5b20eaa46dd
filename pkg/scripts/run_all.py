"""Run every experiment with the packaged defaults, one output directory each.

Usage: python3 scripts/run_all.py [OUT_ROOT] [--only NAME ...]
"""

import argparse
import os
import sys

from parabolic_lab.experiments import EXPERIMENTS, ExperimentConfig, run_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_root", nargs="?", default="runs")
    parser.add_argument("--only", nargs="+", choices=sorted(EXPERIMENTS), default=sorted(EXPERIMENTS))
    parser.add_argument("--cache", default=None, help="Shilnikov cache CSV shared by the runs")
    args = parser.parse_args()
    failed = []
    for name in args.only:
        cfg = ExperimentConfig(name, out_dir=os.path.join(args.out_root, name), cache_path=args.cache)
        manifest = run_experiment(cfg)
        print(f"{'PASS' if manifest.passed else 'FAIL'} {name:24s} {manifest.wall_time:8.1f} s")
        if not manifest.passed:
            failed.append(name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
