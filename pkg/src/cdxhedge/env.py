"""Hedging MDP: an option position hedged with the CDS index under trading costs.

The environment is vectorised over a batch of paths. All market quantities
(option value, upfront, delta, unit trading costs) depend only on the path,
so they are priced once per path set in a :class:`MarketTape`; stepping then
only does the position accounting.

Sign conventions: ``position="short_option"`` means short a payer, hedged by
buying ``a * N`` of index protection; the long position mirrors it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .calendar import TradingGrid, format_timestamp, standard_maturity
from .pricing import BP, GridPricer, IndexSpec, OptionSpec

_CHUNK = 128


@dataclass(frozen=True)
class CostModel:
    """Bid/ask width in bp: a constant, or one value per grid point."""

    ba_bp: Union[float, np.ndarray] = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.ba_bp) < 0):
            raise ValueError("bid/ask must be non-negative")

    def on_grid(self, n_paths: int, n_steps: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.ba_bp, dtype=float), (n_paths, n_steps))


@dataclass(frozen=True)
class EnvConfig:
    index: IndexSpec
    option: OptionSpec
    grid: TradingGrid
    cost: CostModel = field(default_factory=CostModel)
    position: str = "short_option"
    initial_hedge: str = "delta"
    unwind_at_expiry: bool = False

    def __post_init__(self):
        if self.position not in ("short_option", "long_option"):
            raise ValueError(f"unknown position {self.position!r}")
        if self.initial_hedge not in ("delta", "flat"):
            raise ValueError(f"unknown initial hedge {self.initial_hedge!r}")
        if self.option.expiry != self.grid.end:
            raise ValueError("the option must expire on the last grid timestamp")

    @property
    def sign(self) -> float:
        return -1.0 if self.position == "short_option" else 1.0

    def with_cost(self, ba_bp) -> "EnvConfig":
        return replace(self, cost=CostModel(ba_bp))


def make_config(
    grid: TradingGrid,
    strike: float = 0.01,
    vol: float = 0.60,
    ba_bp=0.0,
    maturity: Optional[date] = None,
    notional: float = 100e6,
    kind: str = "payer",
    position: str = "short_option",
    coupon: float = 0.01,
    lgd: float = 0.60,
    initial_hedge: str = "delta",
    unwind_at_expiry: bool = False,
) -> EnvConfig:
    """Default desk setup: a payer expiring at the end of the grid.

    By default the position starts delta hedged (the hedge is exchanged with
    the option at inception, free of bid/ask) and the hedge is not unwound at
    expiry, where physical settlement nets it against the delivered index.
    ``initial_hedge="flat"`` and ``unwind_at_expiry=True`` charge both trades.
    """
    index = IndexSpec(maturity or standard_maturity(grid.start), coupon, lgd, notional)
    option = OptionSpec(kind, strike, grid.end, vol, notional)
    return EnvConfig(index, option, grid, CostModel(ba_bp), position, initial_hedge, unwind_at_expiry)


@dataclass(frozen=True, eq=False)
class MarketTape:
    """Per-path, per-grid-point market data, arrays of shape ``(n_paths, n_steps)``."""

    spread: np.ndarray
    pay: np.ndarray
    upf: np.ndarray
    delta: np.ndarray
    cost_buy: np.ndarray
    cost_sell: np.ndarray
    bidask: np.ndarray

    @classmethod
    def build(cls, config: EnvConfig, spreads, bidask=None) -> "MarketTape":
        spreads = np.atleast_2d(np.asarray(spreads, dtype=float))
        n, k = spreads.shape
        if k != len(config.grid):
            raise ValueError(f"path length {k} differs from grid length {len(config.grid)}")
        if np.any(spreads <= 0):
            raise ValueError("spreads must be strictly positive")
        if bidask is None:
            ba = config.cost.on_grid(n, k)
        else:
            ba = np.broadcast_to(np.asarray(bidask, dtype=float), (n, k))
            if ba.shape != (n, k):
                raise ValueError("bid/ask sequence length differs from grid length")
        pricer = GridPricer(config.grid.timestamps, config.option, config.index)
        out = {name: np.empty((n, k)) for name in ("pay", "upf", "delta", "cost_buy", "cost_sell")}
        for lo in range(0, n, _CHUNK):
            s = spreads[lo : lo + _CHUNK]
            half = 0.5 * ba[lo : lo + _CHUNK] * BP
            upf = pricer.upfront(s)
            out["pay"][lo : lo + _CHUNK] = pricer.option_price(s)
            out["upf"][lo : lo + _CHUNK] = upf
            out["delta"][lo : lo + _CHUNK] = pricer.hedge_ratio(s)
            out["cost_buy"][lo : lo + _CHUNK] = np.abs(pricer.upfront(s + half) - upf)
            out["cost_sell"][lo : lo + _CHUNK] = np.abs(pricer.upfront(s - half) - upf)
        return cls(spreads, bidask=np.array(ba), **out)

    def __len__(self) -> int:
        return self.spread.shape[0]


@dataclass(frozen=True, eq=False)
class EnvState:
    """Observation ``(S_t, Pay_t, N_h(t), a_{t-1})`` for a batch of paths, at grid index ``step``."""

    step: int
    spread: np.ndarray
    pay: np.ndarray
    hedge_ratio: np.ndarray
    prev_action: np.ndarray

    def observation(self) -> np.ndarray:
        return np.stack([self.spread, self.pay, self.hedge_ratio, self.prev_action], axis=-1)


@dataclass(frozen=True, eq=False)
class StepResult:
    state: EnvState
    reward: np.ndarray
    option_pnl: np.ndarray
    hedge_pnl: np.ndarray
    cost: np.ndarray
    done: bool


class HedgingEnv:
    """The MDP over a fixed set of paths. ``step`` is pure: the env holds no episode state."""

    def __init__(self, config: EnvConfig, spreads, bidask=None, tape: Optional[MarketTape] = None):
        self.config = config
        self.tape = tape if tape is not None else MarketTape.build(config, spreads, bidask)
        self.n_steps = self.tape.spread.shape[1]

    def __len__(self) -> int:
        return len(self.tape)

    @property
    def initial_premium(self) -> np.ndarray:
        return self.tape.pay[:, 0]

    def _state(self, k: int, prev_action) -> EnvState:
        t = self.tape
        return EnvState(k, t.spread[:, k], t.pay[:, k], t.delta[:, k], prev_action)

    def reset(self) -> EnvState:
        if self.config.initial_hedge == "delta":
            start = np.clip(self.tape.delta[:, 0], 0.0, 1.0)
        else:
            start = np.zeros(len(self))
        return self._state(0, start)

    def _unit_cost(self, k: int, increase: np.ndarray) -> np.ndarray:
        # short option: the hedge is bought protection, so adding to it buys
        buys = increase if self.config.sign < 0 else ~increase
        return np.where(buys, self.tape.cost_buy[:, k], self.tape.cost_sell[:, k])

    def step(self, state: EnvState, action) -> StepResult:
        k = state.step
        if k >= self.n_steps - 1:
            raise RuntimeError("episode already finished")
        a = np.broadcast_to(np.asarray(action, dtype=float), state.prev_action.shape)
        if np.any(np.isnan(a)):
            raise ValueError("NaN action")
        a = np.clip(a, 0.0, 1.0)
        t, sign, notional = self.tape, self.config.sign, self.config.index.notional

        trade = a - state.prev_action
        cost = np.abs(trade) * notional * self._unit_cost(k, trade > 0)
        done = k + 1 == self.n_steps - 1
        if done and self.config.unwind_at_expiry:
            cost = cost + a * notional * self._unit_cost(k + 1, np.zeros_like(a, dtype=bool))

        option_pnl = sign * (t.pay[:, k + 1] - t.pay[:, k])
        hedge_pnl = -sign * a * notional * (t.upf[:, k + 1] - t.upf[:, k])
        reward = option_pnl - hedge_pnl - cost
        return StepResult(self._state(k + 1, a), reward, option_pnl, hedge_pnl, cost, done)


Policy = Callable[[EnvState], np.ndarray]


def delta_hedge_policy(state: EnvState) -> np.ndarray:
    return np.clip(state.hedge_ratio, 0.0, 1.0)


def zero_policy(state: EnvState) -> np.ndarray:
    return np.zeros_like(state.spread)


@dataclass(frozen=True, eq=False)
class EpisodeRecord:
    """Arrays of shape ``(n_paths, n_steps - 1)``; observations add a trailing axis of 4."""

    grid: TradingGrid
    spreads: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    option_pnl: np.ndarray
    hedge_pnl: np.ndarray
    costs: np.ndarray

    @property
    def total_pnl(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    def write_csv(self, path: Union[str, Path], episode: int = 0) -> None:
        """``step,timestamp,spread_bp,action,reward_eur,cost_eur`` for one episode."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "timestamp", "spread_bp", "action", "reward_eur", "cost_eur"])
            for k in range(self.actions.shape[1]):
                w.writerow([
                    k,
                    format_timestamp(self.grid.timestamps[k]),
                    repr(float(self.spreads[episode, k] / BP)),
                    repr(float(self.actions[episode, k])),
                    repr(float(self.rewards[episode, k])),
                    repr(float(self.costs[episode, k])),
                ])


def rollout(env: HedgingEnv, policy: Policy) -> EpisodeRecord:
    state = env.reset()
    n, k = len(env), env.n_steps - 1
    obs = np.empty((n, k, 4))
    arrays = {name: np.empty((n, k)) for name in ("actions", "rewards", "option_pnl", "hedge_pnl", "costs")}
    for i in range(k):
        obs[:, i] = state.observation()
        res = env.step(state, policy(state))
        arrays["actions"][:, i] = res.state.prev_action
        arrays["rewards"][:, i] = res.reward
        arrays["option_pnl"][:, i] = res.option_pnl
        arrays["hedge_pnl"][:, i] = res.hedge_pnl
        arrays["costs"][:, i] = res.cost
        state = res.state
    return EpisodeRecord(env.config.grid, env.tape.spread, obs, **arrays)


def run_policy(policy: Policy, config: EnvConfig, spreads, bidask=None) -> EpisodeRecord:
    """Roll ``policy`` over one path (1-D spreads) or a batch (2-D)."""
    return rollout(HedgingEnv(config, spreads, bidask), policy)
