#!/usr/bin/env python3
"""Run the full benchmark study: all 29 estimator variants on the scalar
quantized-output model, 1000 Monte Carlo runs by default.

Writes results.csv / timings.csv / rank_*.csv / boxplot_*.csv plus a
side-by-side ranking summary.txt into the output directory.  Expect this
to take a while at full size; --runs 100 gives a quick look.
"""

import argparse
import sys

from quantfilt.cli import run_cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--threads", type=int, default=2)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="paper_iv_out")
    args = ap.parse_args()
    argv = [
        "bench", "--config", "paper_iv",
        "--runs", str(args.runs),
        "--threads", str(args.threads),
        "--out", args.out,
    ]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
