#!/usr/bin/env python3
"""Per-scenario p&l table on real (or synthetic) dealer quotes.

Cleans a quote file, cuts it into 40-day episodes ending before monthly
option expiries, and evaluates the given agents and the delta hedge on each.
Example:

    scripts/real_data_table.py quotes.csv --agent 2=out/a2/checkpoints/policy.ckpt \\
        --agent 10=out/a10/checkpoints/policy.ckpt
"""

import argparse
import sys
from pathlib import Path

from cdxhedge.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("quotes")
    ap.add_argument("--agent", action="append", default=[], help="LAMBDA=CHECKPOINT, repeatable")
    ap.add_argument("--out", default="out/real")
    ap.add_argument("--median", action="store_true", help="median cleaning instead of the 2-sigma filter")
    args = ap.parse_args()
    series = Path(args.out) / "paths" / "series.csv"
    clean = ["clean", "--input", args.quotes, "--output", str(series), "--out", args.out]
    if args.median:
        clean.append("--median")
    rc = cli(clean)
    if rc:
        return rc
    evaluate = ["evaluate", "--series", str(series), "--out", args.out]
    for spec in args.agent:
        evaluate += ["--checkpoint", spec]
    rc = cli(evaluate)
    if rc == 0:
        print((Path(args.out) / "reports" / "scenarios.csv").read_text(), end="")
    return rc


if __name__ == "__main__":
    sys.exit(main())
