#!/usr/bin/env python3
"""Delta-hedge statistics on simulated paths across bid/ask levels.

Prints mean and standard deviation of the terminal p&l, the standard error,
and the mean trading cost per episode for each bid/ask width.
"""

import argparse
from datetime import date

import numpy as np

from cdxhedge.calendar import build_episode_grid
from cdxhedge.env import HedgingEnv, delta_hedge_policy, make_config, rollout
from cdxhedge.market_sim import GbmParams, HestonParams, simulate_gbm, simulate_heston


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20_000)
    ap.add_argument("--model", choices=("gbm", "heston"), default="gbm")
    ap.add_argument("--ba", type=float, nargs="+", default=[0.0, 0.5, 1.0, 1.5, 2.0])
    ap.add_argument("--steps-per-day", type=int, default=17)
    args = ap.parse_args()

    grid = build_episode_grid(date(2021, 3, 22), 40, args.steps_per_day)
    if args.model == "gbm":
        spreads = simulate_gbm(GbmParams(), grid, args.seed, args.episodes).spreads
    else:
        spreads = simulate_heston(HestonParams(), grid, args.seed, args.episodes).spreads
    base = make_config(grid)
    premium = HedgingEnv(base, spreads[:1]).initial_premium[0]
    print(f"initial premium {premium:,.0f} EUR; {args.episodes} {args.model} episodes")
    print(f"{'ba_bp':>6} {'mean_pnl':>12} {'std_pnl':>12} {'std/prem':>9} {'se':>9} {'mean_cost':>12}")
    for ba in args.ba:
        rec = rollout(HedgingEnv(base.with_cost(ba), spreads), delta_hedge_policy)
        pnl = rec.total_pnl
        se = pnl.std() / np.sqrt(len(pnl))
        cost = rec.costs.sum(axis=1).mean()
        print(f"{ba:6.2f} {pnl.mean():12,.0f} {pnl.std():12,.0f} {pnl.std() / premium:9.1%} {se:9,.0f} {cost:12,.0f}")


if __name__ == "__main__":
    main()
