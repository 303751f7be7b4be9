"""Policy evaluation against the delta hedge on paired test sets.

Every comparison runs agent and baseline over the same spread paths and
bid/ask sequences; reports carry a checksum of those inputs so pairing can be
asserted after the fact. Standard deviations are population deviations.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .env import EnvConfig, EpisodeRecord, HedgingEnv, MarketTape, Policy, delta_hedge_policy, rollout

FRONTIER_HEADER = ["lambda", "ba_bp", "delta_pl_eur", "pl_vol_eur"]
TABLE_HEADER = ["scenario", "lambda", "pl_keur", "path_vol_keur"]


def path_checksum(spreads, bidask) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(spreads, dtype=float).tobytes())
    h.update(np.ascontiguousarray(bidask, dtype=float).tobytes())
    return h.hexdigest()


def path_volatility(step_rewards) -> float:
    """Population standard deviation of the step p&l within one episode."""
    r = np.asarray(step_rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("path volatility needs a single episode of at least 2 steps")
    return float(r.std())


@dataclass(frozen=True, eq=False)
class EvalReport:
    episodes: int
    mean_pnl: float
    baseline_mean_pnl: float
    delta_pnl: float
    pl_vol: float
    baseline_pl_vol: float
    terminal_pnl: np.ndarray
    baseline_terminal_pnl: np.ndarray
    path_vols: np.ndarray
    baseline_path_vols: np.ndarray
    agent_checksum: str
    baseline_checksum: str
    record: EpisodeRecord = field(repr=False)
    baseline_record: EpisodeRecord = field(repr=False)

    def __post_init__(self):
        if self.agent_checksum != self.baseline_checksum:
            raise ValueError("agent and baseline were evaluated on different paths")

    @property
    def standard_error(self) -> float:
        return self.pl_vol / np.sqrt(self.episodes)

    def summary(self) -> dict:
        return {
            "episodes": self.episodes,
            "mean_pnl_eur": self.mean_pnl,
            "baseline_mean_pnl_eur": self.baseline_mean_pnl,
            "delta_pnl_eur": self.delta_pnl,
            "pl_vol_eur": self.pl_vol,
            "baseline_pl_vol_eur": self.baseline_pl_vol,
            "mean_path_vol_eur": float(self.path_vols.mean()),
            "baseline_mean_path_vol_eur": float(self.baseline_path_vols.mean()),
            "path_checksum": self.agent_checksum,
        }

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in self.summary().items():
                w.writerow([k, repr(v) if isinstance(v, float) else v])


def evaluate(
    policy: Policy,
    config: EnvConfig,
    spreads,
    bidask=None,
    baseline: Policy = delta_hedge_policy,
) -> EvalReport:
    """Run ``policy`` and ``baseline`` deterministically on identical inputs."""
    spreads = np.atleast_2d(np.asarray(spreads, dtype=float))
    if spreads.shape[0] < 1:
        raise ValueError("at least one episode is required")
    tape = MarketTape.build(config, spreads, bidask)
    env = HedgingEnv(config, None, tape=tape)
    rec = rollout(env, policy)
    base = rollout(env, baseline)
    checksum = path_checksum(tape.spread, tape.bidask)
    pnl, base_pnl = rec.total_pnl, base.total_pnl
    return EvalReport(
        episodes=len(pnl),
        mean_pnl=float(pnl.mean()),
        baseline_mean_pnl=float(base_pnl.mean()),
        delta_pnl=float(pnl.mean() - base_pnl.mean()),
        pl_vol=float(pnl.std()),
        baseline_pl_vol=float(base_pnl.std()),
        terminal_pnl=pnl,
        baseline_terminal_pnl=base_pnl,
        path_vols=rec.rewards.std(axis=1),
        baseline_path_vols=base.rewards.std(axis=1),
        agent_checksum=checksum,
        baseline_checksum=checksum,
        record=rec,
        baseline_record=base,
    )


# ---------------------------------------------------------------------------
# frontier


@dataclass(frozen=True)
class FrontierPoint:
    lam: float
    ba_bp: float
    delta_pnl: float
    pl_vol: float


@dataclass
class DominanceReport:
    baseline_vol: dict = field(default_factory=dict)
    beats_pnl: list = field(default_factory=list)
    beats_pnl_and_vol: list = field(default_factory=list)
    vol_trend: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = []
        for ba, vol in sorted(self.baseline_vol.items()):
            out.append(f"ba={ba!r} delta_hedge_pl_vol_eur={vol!r} spearman_lambda_vs_vol={self.vol_trend.get(ba)!r}")
        out += [f"beats_pnl lambda={p.lam!r} ba={p.ba_bp!r}" for p in self.beats_pnl]
        out += [f"beats_pnl_and_vol lambda={p.lam!r} ba={p.ba_bp!r}" for p in self.beats_pnl_and_vol]
        return out


def build_frontier(
    policies: Mapping[tuple[float, float], Policy],
    config: EnvConfig,
    spreads,
    csv_path: Optional[str | Path] = None,
    report_path: Optional[str | Path] = None,
) -> tuple[list[FrontierPoint], DominanceReport]:
    """One point per ``(lambda, ba_bp)`` key; each ba shares one test set."""
    points: list[FrontierPoint] = []
    report = DominanceReport()
    for ba in sorted({ba for _, ba in policies}):
        cfg = config.with_cost(ba)
        env = HedgingEnv(cfg, spreads)
        base = rollout(env, delta_hedge_policy).total_pnl
        report.baseline_vol[ba] = float(base.std())
        row = []
        for lam in sorted(l for l, b in policies if b == ba):
            pnl = rollout(env, policies[(lam, ba)]).total_pnl
            p = FrontierPoint(lam, ba, float(pnl.mean() - base.mean()), float(pnl.std()))
            row.append(p)
            if p.delta_pnl > 0:
                report.beats_pnl.append(p)
                if p.pl_vol < report.baseline_vol[ba]:
                    report.beats_pnl_and_vol.append(p)
        if len(row) >= 2:
            report.vol_trend[ba] = float(spearmanr([p.lam for p in row], [p.pl_vol for p in row])[0])
        points += row
    if csv_path is not None:
        write_frontier(points, csv_path)
    if report_path is not None:
        Path(report_path).write_text("\n".join(report.lines()) + "\n")
    return points, report


def write_frontier(points: Sequence[FrontierPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FRONTIER_HEADER)
        for p in points:
            w.writerow([repr(p.lam), repr(p.ba_bp), repr(p.delta_pnl), repr(p.pl_vol)])


# ---------------------------------------------------------------------------
# p&l distribution


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left_eur", "bin_right_eur", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def histogram(values, bin_width: float) -> Histogram:
    """Bins of ``bin_width`` aligned on multiples of it, so 0 is always an edge."""
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    v = np.asarray(values, dtype=float)
    lo = np.floor(v.min() / bin_width)
    hi = np.floor(v.max() / bin_width) + 1
    edges = np.arange(lo, hi + 1) * bin_width
    idx = np.clip(np.floor(v / bin_width) - lo, 0, len(edges) - 2).astype(int)
    return Histogram(edges, np.bincount(idx, minlength=len(edges) - 1))


def pl_distribution(
    policy: Policy,
    baseline: Policy,
    config: EnvConfig,
    spreads,
    bin_width: float = 10_000.0,
    bidask=None,
) -> tuple[np.ndarray, Histogram]:
    """Per-episode agent minus baseline p&l, and its histogram."""
    report = evaluate(policy, config, spreads, bidask, baseline)
    diff = report.terminal_pnl - report.baseline_terminal_pnl
    return diff, histogram(diff, bin_width)


# ---------------------------------------------------------------------------
# real-data scenario table


@dataclass(frozen=True)
class ScenarioRow:
    scenario: int
    lam: Optional[float]
    pnl: float
    path_vol: float


def scenario_table(
    policies: Mapping[float, Policy],
    scenarios: Sequence[tuple[EnvConfig, np.ndarray, np.ndarray]],
) -> list[ScenarioRow]:
    """Terminal p&l and path volatility per scenario; ``lam=None`` is the delta hedge.

    ``scenarios`` holds ``(config, spreads, bidask)`` for each real episode.
    """
    rows = []
    for i, (cfg, spreads, bidask) in enumerate(scenarios, start=1):
        env = HedgingEnv(cfg, spreads, bidask)
        for lam in sorted(policies):
            rec = rollout(env, policies[lam])
            rows.append(ScenarioRow(i, lam, float(rec.total_pnl[0]), path_volatility(rec.rewards[0])))
        rec = rollout(env, delta_hedge_policy)
        rows.append(ScenarioRow(i, None, float(rec.total_pnl[0]), path_volatility(rec.rewards[0])))
    return rows


def write_scenario_table(rows: Sequence[ScenarioRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_HEADER)
        for r in rows:
            lam = "delta" if r.lam is None else repr(r.lam)
            w.writerow([r.scenario, lam, repr(r.pnl / 1e3), repr(r.path_vol / 1e3)])
