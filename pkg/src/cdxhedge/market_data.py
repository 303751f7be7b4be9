"""Dealer quote ingestion, 2-sigma cleaning, episode slicing and trading costs.

Quotes and cleaned series are in basis points; everything handed to the
pricing layer is converted to decimals.
"""

from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calendar import (
    SESSION_OPEN,
    TradingGrid,
    format_timestamp,
    intraday_offsets,
    parse_timestamp,
)
from .pricing import BP, IndexSpec, upfront

log = logging.getLogger(__name__)

QUOTE_HEADER = ["timestamp", "dealer_id", "bid_bp", "ask_bp"]
SERIES_HEADER = ["timestamp", "mid_bp", "bidask_bp"]
MIN_QUOTES_FOR_FILTER = 3


class QuoteFileError(ValueError):
    """Raised when a quote file cannot be parsed; carries per-line diagnostics."""

    def __init__(self, path, problems: list[tuple[int, str]]):
        self.problems = problems
        lines = "\n".join(f"  line {n}: {msg}" for n, msg in problems[:20])
        more = f"\n  ... {len(problems) - 20} more" if len(problems) > 20 else ""
        super().__init__(f"{path}: {len(problems)} malformed row(s)\n{lines}{more}")


@dataclass(frozen=True)
class QuoteSnapshot:
    timestamp: datetime
    quotes: tuple[tuple[str, float, float], ...]

    @property
    def bids(self) -> np.ndarray:
        return np.array([q[1] for q in self.quotes])

    @property
    def asks(self) -> np.ndarray:
        return np.array([q[2] for q in self.quotes])


@dataclass(frozen=True)
class CleanQuote:
    bid: float
    ask: float
    mid: float
    bidask: float
    discarded_bid: int = 0
    discarded_ask: int = 0


@dataclass(frozen=True, eq=False)
class CleanSeries:
    timestamps: tuple[datetime, ...]
    mid: np.ndarray
    bidask: np.ndarray

    def __post_init__(self):
        if not (len(self.timestamps) == len(self.mid) == len(self.bidask)):
            raise ValueError("misaligned clean series")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("clean series timestamps must be strictly increasing")
        if np.any(np.asarray(self.bidask) < 0):
            raise ValueError("negative bid/ask width in clean series")

    def __len__(self) -> int:
        return len(self.timestamps)


# ---------------------------------------------------------------------------
# cleaning


def filter_side(values: Sequence[float]) -> tuple[float, int]:
    """Mean of the quotes within two population standard deviations of the mean.

    Quotes exactly at the 2-sigma boundary survive. With fewer than three
    quotes the plain mean is returned.
    """
    q = np.asarray(values, dtype=float)
    if q.size == 0:
        raise ValueError("no quotes on this side")
    if q.size < MIN_QUOTES_FOR_FILTER:
        return float(q.mean()), 0
    mean, sd = q.mean(), q.std()
    keep = np.abs(q - mean) <= 2.0 * sd
    return float(q[keep].mean()), int(np.count_nonzero(~keep))


def clean_snapshot(snap: QuoteSnapshot, method: str = "sigma") -> CleanQuote:
    """Applicable bid/ask, mid and bid/ask width of one snapshot.

    ``method="median"`` takes the median of the unfiltered quotes instead.
    """
    bids, asks = snap.bids, snap.asks
    if bids.size == 0 or asks.size == 0:
        raise ValueError(f"snapshot {snap.timestamp} has an empty side")
    if method == "sigma":
        bid, nb = filter_side(bids)
        ask, na = filter_side(asks)
    elif method == "median":
        bid, nb = float(np.median(bids)), 0
        ask, na = float(np.median(asks)), 0
    else:
        raise ValueError(f"unknown cleaning method {method!r}")
    return CleanQuote(bid, ask, 0.5 * (bid + ask), ask - bid, nb, na)


@dataclass
class CleaningReport:
    snapshots: int = 0
    discarded_bid: int = 0
    discarded_ask: int = 0
    crossed: list = field(default_factory=list)

    def lines(self) -> list[str]:
        return [
            f"snapshots={self.snapshots}",
            f"discarded_bid={self.discarded_bid}",
            f"discarded_ask={self.discarded_ask}",
            f"crossed_snapshots={len(self.crossed)}",
        ]


def clean_quotes(snapshots: Iterable[QuoteSnapshot], method: str = "sigma") -> tuple[CleanSeries, CleaningReport]:
    """Clean every snapshot. Crossed quotes (bid > ask) are reported, not fixed."""
    report = CleaningReport()
    stamps, mids, widths = [], [], []
    for snap in snapshots:
        c = clean_snapshot(snap, method)
        report.snapshots += 1
        report.discarded_bid += c.discarded_bid
        report.discarded_ask += c.discarded_ask
        if c.bid > c.ask:
            report.crossed.append(snap.timestamp)
            log.warning("crossed applicable quotes at %s: bid %.4f > ask %.4f", snap.timestamp, c.bid, c.ask)
        stamps.append(snap.timestamp)
        mids.append(c.mid)
        widths.append(abs(c.bidask))
    return CleanSeries(tuple(stamps), np.array(mids), np.array(widths)), report


# ---------------------------------------------------------------------------
# files


def load_quotes(path: str | Path) -> list[QuoteSnapshot]:
    """Read a ``timestamp,dealer_id,bid_bp,ask_bp`` file into sorted snapshots."""
    groups: dict[datetime, list] = {}
    problems: list[tuple[int, str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != QUOTE_HEADER:
            raise QuoteFileError(path, [(1, f"expected header {','.join(QUOTE_HEADER)}, got {','.join(header)}")])
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                problems.append((lineno, f"expected 4 fields, got {len(row)}"))
                continue
            try:
                ts = parse_timestamp(row[0])
                bid, ask = float(row[2]), float(row[3])
            except ValueError as exc:
                problems.append((lineno, str(exc)))
                continue
            if not (bid > 0 and ask > 0):
                problems.append((lineno, "bid and ask must be positive"))
                continue
            groups.setdefault(ts, []).append((row[1].strip(), bid, ask))
    if problems:
        raise QuoteFileError(path, problems)
    return [QuoteSnapshot(ts, tuple(groups[ts])) for ts in sorted(groups)]


def write_quotes(snapshots: Iterable[QuoteSnapshot], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUOTE_HEADER)
        for snap in snapshots:
            for dealer, bid, ask in snap.quotes:
                w.writerow([format_timestamp(snap.timestamp), dealer, repr(bid), repr(ask)])


def write_series(series: CleanSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_HEADER)
        for ts, m, b in zip(series.timestamps, series.mid, series.bidask):
            w.writerow([format_timestamp(ts), repr(float(m)), repr(float(b))])


def load_series(path: str | Path) -> CleanSeries:
    stamps, mids, widths = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SERIES_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SERIES_HEADER)}")
        for r in reader:
            stamps.append(parse_timestamp(r["timestamp"]))
            mids.append(float(r["mid_bp"]))
            widths.append(float(r["bidask_bp"]))
    return CleanSeries(tuple(stamps), np.array(mids), np.array(widths))


# ---------------------------------------------------------------------------
# trading costs


def transaction_cost(notional: float, spread: float, t, ba_bp: float, side: str, spec: IndexSpec) -> float:
    """Cost of trading ``notional`` of index protection at half the bid/ask away from mid."""
    if notional < 0:
        raise ValueError("traded notional must be non-negative")
    if side == "buy_protection":
        shifted = spread + 0.5 * ba_bp * BP
    elif side == "sell_protection":
        shifted = spread - 0.5 * ba_bp * BP
    else:
        raise ValueError(f"unknown side {side!r}")
    return notional * abs(upfront(shifted, t, spec) - upfront(spread, t, spec))


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True, eq=False)
class Episode:
    grid: TradingGrid
    spreads_bp: np.ndarray
    bidask_bp: np.ndarray
    filled: int = 0


def third_wednesday(year: int, month: int) -> date:
    d = date(year, month, 1)
    d += timedelta(days=(2 - d.weekday()) % 7)
    return d + timedelta(days=14)


def _day_table(series: CleanSeries, steps_per_day: int):
    """Regularise the series onto the session grid of every day it covers.

    Each slot takes the latest observation at or before it. Slots after the
    final observation are unavailable; slots without an exact observation are
    counted as forward fills.
    """
    offsets = intraday_offsets(steps_per_day)
    times = np.array([np.datetime64(t, "s") for t in series.timestamps])
    last = series.timestamps[-1]
    days = sorted({t.date() for t in series.timestamps if t.weekday() < 5})
    table = []
    for d in days:
        slots = [datetime.combine(d, SESSION_OPEN) + off for off in offsets]
        if slots[-1] > last:
            break
        keys = np.array([np.datetime64(s, "s") for s in slots])
        idx = np.searchsorted(times, keys, side="right") - 1
        if idx[0] < 0:
            continue
        exact = int(np.count_nonzero(times[idx] == keys))
        table.append((d, slots, idx, steps_per_day - exact))
    return table


def _make_episode(series, rows, steps_per_day) -> Episode:
    slots = [s for _, ss, _, _ in rows for s in ss]
    idx = np.concatenate([i for _, _, i, _ in rows])
    filled = sum(f for *_, f in rows)
    grid = TradingGrid.from_timestamps(slots, steps_per_day)
    return Episode(grid, np.asarray(series.mid)[idx], np.asarray(series.bidask)[idx], filled)


def slice_episodes(
    series: CleanSeries, n_days: int = 40, steps_per_day: int = 17, align: str = "consecutive"
) -> list[Episode]:
    """Cut a clean series into non-overlapping episodes of ``n_days`` trading days.

    ``align="consecutive"`` takes back-to-back windows from the start and drops
    the incomplete tail. ``align="expiry"`` ends each window on the last trading
    day before a monthly option expiry (third Wednesday), taking expiries in
    chronological order and skipping those whose window would overlap the
    previous episode or run off the data.
    """
    if len(series) == 0:
        raise ValueError("empty series")
    table = _day_table(series, steps_per_day)
    episodes: list[Episode] = []
    if align == "consecutive":
        for start in range(0, len(table) - n_days + 1, n_days):
            episodes.append(_make_episode(series, table[start : start + n_days], steps_per_day))
    elif align == "expiry":
        days = [d for d, *_ in table]
        next_free = 0
        y, m = days[0].year, days[0].month
        while days and date(y, m, 1) <= days[-1]:
            expiry = third_wednesday(y, m)
            eve = expiry - timedelta(days=1)
            while eve.weekday() >= 5:
                eve -= timedelta(days=1)
            if days[-1] >= eve:
                last = bisect.bisect_left(days, expiry) - 1
                first = last - n_days + 1
                if first >= next_free:
                    episodes.append(_make_episode(series, table[first : last + 1], steps_per_day))
                    next_free = last + 1
            y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    else:
        raise ValueError(f"unknown alignment {align!r}")
    if not episodes:
        raise ValueError(f"series too short for one episode of {n_days} days x {steps_per_day} steps")
    return episodes


def synthetic_quotes(
    start: date,
    end: date,
    n_dealers: int = 20,
    seed: int = 0,
    mid_bp: float = 60.0,
    vol: float = 0.6,
    width_bp: float = 1.0,
    typo_rate: float = 0.002,
) -> list[QuoteSnapshot]:
    """Half-hourly multi-dealer snapshots on weekdays, for demos and tests.

    The mid follows a driftless GBM; each dealer quotes around it with small
    noise, and a few quotes are replaced by gross typos.
    """
    rng = np.random.default_rng(seed)
    offsets = intraday_offsets(17)
    snaps, mid, prev = [], mid_bp, None
    d = start
    while d <= end:
        if d.weekday() < 5:
            for off in offsets:
                ts = datetime.combine(d, SESSION_OPEN) + off
                if prev is not None:
                    dt = (ts - prev).total_seconds() / (365 * 86400)
                    mid *= np.exp(-0.5 * vol**2 * dt + vol * np.sqrt(dt) * rng.standard_normal())
                prev = ts
                half = 0.5 * width_bp * np.exp(0.2 * rng.standard_normal())
                noise = 0.1 * rng.standard_normal((n_dealers, 2))
                bids = mid - half + noise[:, 0]
                asks = mid + half + noise[:, 1]
                typo = rng.random((n_dealers, 2)) < typo_rate
                bids = np.where(typo[:, 0], bids * 10, bids)
                asks = np.where(typo[:, 1], asks * 10, asks)
                quotes = tuple((f"D{i:02d}", round(float(b), 4), round(float(a), 4)) for i, (b, a) in enumerate(zip(bids, asks)))
                snaps.append(QuoteSnapshot(ts, quotes))
        d += timedelta(days=1)
    return snaps
