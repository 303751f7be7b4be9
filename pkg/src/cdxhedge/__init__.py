"""Hedging CDS index options under trading costs with risk-averse policy search."""

from .calendar import TradingGrid, build_episode_grid, coupon_schedule, year_fraction
from .env import EnvConfig, HedgingEnv, delta_hedge_policy, make_config, rollout
from .evaluation import EvalReport, build_frontier, evaluate, path_volatility, pl_distribution
from .market_data import clean_quotes, load_quotes, slice_episodes, transaction_cost
from .market_sim import GbmParams, HestonParams, simulate_gbm, simulate_heston
from .pricing import IndexSpec, MarketState, OptionSpec, adjusted_forward, annuity, hedge_ratio, option_price, upfront

__version__ = "0.1.0"

__all__ = [
    "EnvConfig",
    "EvalReport",
    "GbmParams",
    "HedgingEnv",
    "HestonParams",
    "IndexSpec",
    "MarketState",
    "OptionSpec",
    "TradingGrid",
    "adjusted_forward",
    "annuity",
    "build_episode_grid",
    "build_frontier",
    "clean_quotes",
    "coupon_schedule",
    "delta_hedge_policy",
    "evaluate",
    "hedge_ratio",
    "load_quotes",
    "make_config",
    "option_price",
    "path_volatility",
    "pl_distribution",
    "rollout",
    "simulate_gbm",
    "simulate_heston",
    "slice_episodes",
    "transaction_cost",
    "upfront",
    "year_fraction",
]
