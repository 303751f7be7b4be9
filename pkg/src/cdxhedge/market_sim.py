"""Spread path generation on a trading grid: GBM and Heston dynamics.

Every path draws from its own ``SeedSequence`` child, so path ``i`` of a run
depends only on ``(seed, i)`` and the grid. GBM and Heston consume the spread
shocks in the same order, which makes a zero vol-of-vol Heston run reproduce
the GBM run with ``sigma = sqrt(theta)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .calendar import TradingGrid, format_timestamp


@dataclass(frozen=True)
class GbmParams:
    s0: float = 0.01
    mu: float = 0.0
    sigma: float = 0.60

    def __post_init__(self):
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class HestonParams:
    s0: float = 0.01
    v0: float = 0.36
    kappa: float = 2.0
    theta: float = 0.36
    xi: float = 0.9
    rho: float = 0.0

    def __post_init__(self):
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if min(self.kappa, self.theta, self.xi, self.v0) < 0:
            raise ValueError("kappa, theta, xi and v0 must be non-negative")
        if abs(self.rho) > 1:
            raise ValueError("|rho| must not exceed 1")


@dataclass(frozen=True, eq=False)
class MarketPath:
    """Spreads (decimal) on a grid, with the instantaneous variance for Heston."""

    grid: TradingGrid
    spreads: np.ndarray
    variance: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if len(self.spreads) != len(self.grid):
            raise ValueError("spread sequence length differs from grid length")
        if self.variance is not None and len(self.variance) != len(self.grid):
            raise ValueError("variance sequence length differs from grid length")
        if not np.all(self.spreads > 0):
            raise ValueError("spreads must be strictly positive")


@dataclass(frozen=True, eq=False)
class PathSet:
    """``n_paths`` paths sharing one grid, stored as ``(n_paths, len(grid))`` arrays."""

    grid: TradingGrid
    spreads: np.ndarray
    variance: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.spreads.shape[0]

    def __getitem__(self, i: int) -> MarketPath:
        var = None if self.variance is None else self.variance[i]
        return MarketPath(self.grid, self.spreads[i], var)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "PathSet":
        var = None if self.variance is None else self.variance[idx]
        return PathSet(self.grid, self.spreads[idx], var)


def _path_generators(seed: int, n_paths: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_paths)]


def simulate_gbm(params: GbmParams, grid: TradingGrid, seed: int, n_paths: int) -> PathSet:
    """Exact log-normal stepping over the actual elapsed time between grid points."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    dt = grid.dt_years
    z = np.stack([g.standard_normal(len(dt)) for g in _path_generators(seed, n_paths)])
    incr = (params.mu - 0.5 * params.sigma**2) * dt + params.sigma * np.sqrt(dt) * z
    log_s = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(incr, axis=1)], axis=1)
    return PathSet(grid, params.s0 * np.exp(log_s))


def simulate_heston(params: HestonParams, grid: TradingGrid, seed: int, n_paths: int) -> PathSet:
    """Full-truncation Euler for the variance, log-Euler for the spread."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    dt = grid.dt_years
    n = len(dt)
    z_s = np.empty((n_paths, n))
    z_v = np.empty((n_paths, n))
    for i, g in enumerate(_path_generators(seed, n_paths)):
        z_s[i] = g.standard_normal(n)
        z_v[i] = g.standard_normal(n)
    z_v = params.rho * z_s + np.sqrt(1.0 - params.rho**2) * z_v

    v = np.empty((n_paths, n + 1))
    v[:, 0] = params.v0
    log_incr = np.empty((n_paths, n))
    for k in range(n):
        vp = np.maximum(v[:, k], 0.0)
        vol = np.sqrt(vp)
        log_incr[:, k] = -0.5 * vol**2 * dt[k] + vol * np.sqrt(dt[k]) * z_s[:, k]
        v[:, k + 1] = v[:, k] + params.kappa * (params.theta - vp) * dt[k] + params.xi * vol * np.sqrt(dt[k]) * z_v[:, k]
    log_s = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(log_incr, axis=1)], axis=1)
    # the truncated variance is what drives the spread
    return PathSet(grid, params.s0 * np.exp(log_s), np.maximum(v, 0.0))


def write_paths_csv(paths: PathSet, path: str | Path) -> None:
    """CSV with columns ``path_id,step,timestamp,spread[,variance]``."""
    stamps = [format_timestamp(t) for t in paths.grid.timestamps]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["path_id", "step", "timestamp", "spread"]
        if paths.variance is not None:
            header.append("variance")
        w.writerow(header)
        for i in range(len(paths)):
            for k, ts in enumerate(stamps):
                row = [i, k, ts, repr(float(paths.spreads[i, k]))]
                if paths.variance is not None:
                    row.append(repr(float(paths.variance[i, k])))
                w.writerow(row)


def read_paths_csv(path: str | Path, steps_per_day: int) -> PathSet:
    from .calendar import parse_timestamp

    rows: dict[int, list] = {}
    stamps: dict[int, str] = {}
    has_var = False
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        has_var = "variance" in (reader.fieldnames or [])
        for r in reader:
            pid, k = int(r["path_id"]), int(r["step"])
            rows.setdefault(pid, []).append((k, float(r["spread"]), float(r["variance"]) if has_var else None))
            stamps[k] = r["timestamp"]
    grid = TradingGrid.from_timestamps([parse_timestamp(stamps[k]) for k in sorted(stamps)], steps_per_day)
    ids = sorted(rows)
    spreads = np.array([[s for _, s, _ in sorted(rows[i])] for i in ids])
    var = np.array([[v for _, _, v in sorted(rows[i])] for i in ids]) if has_var else None
    return PathSet(grid, spreads, var)
