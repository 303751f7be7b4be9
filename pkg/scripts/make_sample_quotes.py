#!/usr/bin/env python3
"""Write a synthetic multi-dealer quote file (timestamp,dealer_id,bid_bp,ask_bp)."""

import argparse
from datetime import date

from cdxhedge.market_data import synthetic_quotes, write_quotes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("output")
    ap.add_argument("--start", type=date.fromisoformat, default=date(2021, 1, 1))
    ap.add_argument("--end", type=date.fromisoformat, default=date(2021, 12, 31))
    ap.add_argument("--dealers", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--typo-rate", type=float, default=0.002)
    args = ap.parse_args()
    snaps = synthetic_quotes(args.start, args.end, args.dealers, args.seed, typo_rate=args.typo_rate)
    write_quotes(snaps, args.output)
    print(f"wrote {len(snaps)} snapshots x {args.dealers} dealers to {args.output}")


if __name__ == "__main__":
    main()
