#!/usr/bin/env python3
"""Train and evaluate the full (lambda, bid/ask) grid of agents.

A thin wrapper over ``cdxhedge frontier``. Agents already present in
OUT/checkpoints are reused, so an interrupted sweep resumes where it stopped.
With the desk preset each agent sees about 4,000 training episodes.
"""

import argparse
import sys

from cdxhedge.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/frontier")
    ap.add_argument("--preset", choices=("desk", "full"), default="desk")
    ap.add_argument("--lambdas", default="1,2,4,10,25")
    ap.add_argument("--ba-grid", default="0.5,1,1.5,2")
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    argv = [
        "frontier", "--out", args.out, "--preset", args.preset, "--lambdas", args.lambdas,
        "--ba-grid", args.ba_grid, "--episodes", str(args.episodes), "--seed", str(args.seed), "-v",
    ]
    return cli(argv)


if __name__ == "__main__":
    sys.exit(main())
