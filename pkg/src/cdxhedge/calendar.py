"""Date arithmetic, IMM coupon schedules and the intraday trading grid.

All timestamps are naive ``datetime`` objects (CET, no time zones). Only
weekends are treated as non-business days.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import Sequence, Union

import numpy as np

Timestamp = datetime
DateLike = Union[date, datetime]

SESSION_OPEN = time(9, 30)
SESSION_CLOSE = time(17, 30)
COUPON_MONTHS = (3, 6, 9, 12)
MATURITY_MONTHS = (6, 12)
IMM_DAY = 20

DAY_COUNT = {"ACT/360": 360.0, "ACT/365": 365.0}


def parse_timestamp(text: str) -> datetime:
    """Parse ``YYYY-MM-DDTHH:MM`` (a bare date means midnight)."""
    text = text.strip()
    if "T" in text or " " in text:
        return datetime.fromisoformat(text.replace(" ", "T"))
    return datetime.combine(date.fromisoformat(text), time(0, 0))


def format_timestamp(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M")


def _as_datetime(d: DateLike) -> datetime:
    if isinstance(d, datetime):
        return d
    return datetime.combine(d, time(0, 0))


def _as_date(d: DateLike) -> date:
    return d.date() if isinstance(d, datetime) else d


def is_business_day(d: DateLike) -> bool:
    return _as_date(d).weekday() < 5


def following_business_day(d: date) -> date:
    while d.weekday() >= 5:
        d += timedelta(days=1)
    return d


def year_fraction(d1: DateLike, d2: DateLike, convention: str = "ACT/360") -> float:
    """Elapsed calendar time between ``d1`` and ``d2`` over a 360 or 365 day year.

    Time of day counts as a fraction of a day, so intraday valuations move
    smoothly; for pure dates this is the usual whole-day count.
    """
    try:
        denom = DAY_COUNT[convention]
    except KeyError:
        raise ValueError(f"unknown day-count convention {convention!r}") from None
    a, b = _as_datetime(d1), _as_datetime(d2)
    if a > b:
        raise ValueError(f"year_fraction needs d1 <= d2, got {a} > {b}")
    return (b - a).total_seconds() / 86400.0 / denom


# ---------------------------------------------------------------------------
# coupon schedules


@dataclass(frozen=True)
class CouponSchedule:
    """Coupon dates strictly after ``t + 1 day`` up to and including maturity.

    ``previous`` is the (adjusted) coupon date preceding ``dates[0]``; it only
    matters for the annuity when it lies after the valuation time.
    """

    dates: tuple[date, ...]
    maturity: date
    previous: date

    def __post_init__(self):
        if not self.dates:
            raise ValueError("empty coupon schedule")
        if self.dates[-1] != self.maturity:
            raise ValueError("last coupon date must equal the index maturity")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("coupon dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.dates)


def _unadjusted_coupon_dates(start_year: int, end: date) -> list[date]:
    out = []
    year = start_year
    while True:
        for m in COUPON_MONTHS:
            d = date(year, m, IMM_DAY)
            if d > end:
                return out
            out.append(d)
        year += 1


def is_imm_maturity(d: DateLike) -> bool:
    d = _as_date(d)
    return d.day == IMM_DAY and d.month in MATURITY_MONTHS


def coupon_schedule(t: DateLike, t_n: DateLike) -> CouponSchedule:
    """Coupon strip of an index maturing at ``t_n`` seen from ``t``.

    Intermediate dates roll to the following weekday; the maturity itself is
    never adjusted. A coupon falling on ``t + 1 day`` is excluded.
    """
    t_date, mat = _as_date(t), _as_date(t_n)
    if t_date >= mat:
        raise ValueError(f"empty schedule: valuation date {t_date} is not before maturity {mat}")
    if not is_imm_maturity(mat):
        raise ValueError(f"{mat} is not an IMM index maturity (20 Jun / 20 Dec)")
    raw = _unadjusted_coupon_dates(t_date.year - 1, mat)
    adjusted = [following_business_day(d) for d in raw[:-1]] + [mat]
    cutoff = t_date + timedelta(days=1)
    first = next(i for i, d in enumerate(adjusted) if d > cutoff)
    return CouponSchedule(tuple(adjusted[first:]), mat, adjusted[first - 1])


def previous_coupon_date(t: DateLike) -> date:
    """Latest adjusted coupon date on or before ``t`` (the accrual start)."""
    t_date = _as_date(t)
    year = t_date.year
    candidates = [following_business_day(date(y, m, IMM_DAY)) for y in (year - 1, year) for m in COUPON_MONTHS]
    return max(d for d in candidates if d <= t_date)


def standard_maturity(t: DateLike, tenor_years: int = 5) -> date:
    """Maturity of the on-the-run index of the given tenor at ``t``.

    Series roll on 20 Mar / 20 Sep; a March series matures on 20 Jun and a
    September series on 20 Dec, ``tenor_years`` later.
    """
    d = _as_date(t)
    mar = following_business_day(date(d.year, 3, IMM_DAY))
    sep = following_business_day(date(d.year, 9, IMM_DAY))
    if d < mar:
        return date(d.year - 1 + tenor_years, 12, IMM_DAY)
    if d < sep:
        return date(d.year + tenor_years, 6, IMM_DAY)
    return date(d.year + tenor_years, 12, IMM_DAY)


# ---------------------------------------------------------------------------
# trading grid


@dataclass(frozen=True, eq=False)
class TradingGrid:
    timestamps: tuple[datetime, ...]
    steps_per_day: int
    elapsed_hours: np.ndarray = field(repr=False)
    day_index: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_days(self) -> int:
        return len(self.timestamps) // self.steps_per_day

    @property
    def start(self) -> datetime:
        return self.timestamps[0]

    @property
    def end(self) -> datetime:
        return self.timestamps[-1]

    @property
    def dt_years(self) -> np.ndarray:
        """Step lengths in years of 365 days (8,760 hours)."""
        return self.elapsed_hours / (24.0 * 365.0)

    @classmethod
    def from_timestamps(cls, timestamps: Sequence[datetime], steps_per_day: int) -> "TradingGrid":
        ts = tuple(timestamps)
        if len(ts) < 2:
            raise ValueError("a grid needs at least two points")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("grid timestamps must be strictly increasing")
        hours = np.array([(b - a).total_seconds() / 3600.0 for a, b in zip(ts, ts[1:])])
        days = sorted({t.date() for t in ts})
        lookup = {d: i for i, d in enumerate(days)}
        day_index = np.array([lookup[t.date()] for t in ts])
        return cls(ts, steps_per_day, hours, day_index)

    def __eq__(self, other):
        if not isinstance(other, TradingGrid):
            return NotImplemented
        return self.timestamps == other.timestamps and self.steps_per_day == other.steps_per_day

    def __hash__(self):
        return hash((self.timestamps, self.steps_per_day))


def intraday_offsets(steps_per_day: int) -> list[timedelta]:
    """Evenly spaced points over the 09:30-17:30 session, rounded to the second."""
    session = 8 * 3600
    return [timedelta(seconds=round(k * session / (steps_per_day - 1))) for k in range(steps_per_day)]


def trading_days(start: date, n_days: int) -> list[date]:
    out, d = [], start
    while len(out) < n_days:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def build_episode_grid(start_date: DateLike, n_days: int, steps_per_day: int = 17) -> TradingGrid:
    """Decision times of an episode: ``steps_per_day`` points per weekday.

    With the default 17 points the intraday gap is 30 minutes and the
    overnight gap 16 + 24 n hours for n skipped weekend days.
    """
    d0 = _as_date(start_date)
    if d0.weekday() >= 5:
        raise ValueError(f"episode start {d0} falls on a weekend")
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    if steps_per_day < 2:
        raise ValueError("steps_per_day must be >= 2")
    offsets = intraday_offsets(steps_per_day)
    stamps = [datetime.combine(d, SESSION_OPEN) + off for d in trading_days(d0, n_days) for off in offsets]
    return TradingGrid.from_timestamps(stamps, steps_per_day)
