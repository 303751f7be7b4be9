"""Valuation of the CDS index upfront and of payer/receiver index options.

Interest rates are zero and defaults are ignored inside an episode. Spreads
are decimals (0.01 = 100 bp). The scalar functions below are thin wrappers
around array kernels that are shared with :class:`GridPricer`, which values
whole path sets on a trading grid at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .calendar import (
    CouponSchedule,
    DateLike,
    _as_date,
    coupon_schedule,
    previous_coupon_date,
    year_fraction,
)

BP = 1e-4
DELTA_BUMP = 0.01 * BP
_SINGULAR = 1e-12


@dataclass(frozen=True)
class IndexSpec:
    maturity: date
    coupon: float = 0.01
    lgd: float = 0.60
    notional: float = 100e6

    def __post_init__(self):
        if not 0.0 < self.lgd <= 1.0:
            raise ValueError(f"LGD must lie in (0, 1], got {self.lgd}")
        if self.notional <= 0:
            raise ValueError("notional must be positive")


@dataclass(frozen=True)
class OptionSpec:
    kind: str
    strike: float
    expiry: datetime
    vol: float = 0.60
    notional: float = 100e6

    def __post_init__(self):
        if self.kind not in ("payer", "receiver"):
            raise ValueError(f"option kind must be 'payer' or 'receiver', got {self.kind!r}")
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.vol <= 0:
            raise ValueError("volatility must be positive")


@dataclass(frozen=True)
class MarketState:
    t: datetime
    spread: float

    def __post_init__(self):
        if not self.spread > 0:
            raise ValueError("spread must be positive")


# ---------------------------------------------------------------------------
# array kernels


@dataclass(frozen=True, eq=False)
class AnnuityLegs:
    """Time data of the annuity sum, ACT/360.

    ``accrual`` holds the period fractions tau(max(t_{i-1}, t), t_i);
    ``h_start``/``h_end`` the survival horizons from t to each period's ends.
    Trailing axes index coupons; padded entries carry zero accrual.
    """

    accrual: np.ndarray
    h_start: np.ndarray
    h_end: np.ndarray

    @classmethod
    def at(cls, t: DateLike, schedule: CouponSchedule) -> "AnnuityLegs":
        t_dt = t if isinstance(t, datetime) else datetime.combine(t, datetime.min.time())
        starts = (schedule.previous,) + schedule.dates[:-1]
        acc, h0, h1 = [], [], []
        for s, e in zip(starts, schedule.dates):
            s_dt = max(datetime.combine(s, datetime.min.time()), t_dt)
            e_dt = datetime.combine(e, datetime.min.time())
            acc.append(year_fraction(s_dt, e_dt, "ACT/360"))
            h0.append(year_fraction(t_dt, s_dt, "ACT/360"))
            h1.append(year_fraction(t_dt, e_dt, "ACT/360"))
        return cls(np.array(acc), np.array(h0), np.array(h1))

    @classmethod
    def stack(cls, legs: Sequence["AnnuityLegs"]) -> "AnnuityLegs":
        width = max(len(l.accrual) for l in legs)

        def pad(name):
            out = np.zeros((len(legs), width))
            for i, l in enumerate(legs):
                v = getattr(l, name)
                out[i, : len(v)] = v
            return out

        return cls(pad("accrual"), pad("h_start"), pad("h_end"))


def survival_kernel(spread, horizon, lgd: float):
    return np.exp(-np.asarray(spread) * horizon / lgd)


def annuity_kernel(spread, legs: AnnuityLegs, lgd: float):
    s = np.asarray(spread, dtype=float)[..., None]
    p0 = np.exp(-s * legs.h_start / lgd)
    p1 = np.exp(-s * legs.h_end / lgd)
    return np.sum(legs.accrual * 0.5 * (p0 + p1), axis=-1)


def black_kernel(forward, strike, vol, tau_bar, kind: str = "payer"):
    """Undiscounted Black value per unit annuity; intrinsic where tau_bar == 0."""
    forward = np.asarray(forward, dtype=float)
    tau_bar = np.asarray(tau_bar, dtype=float)
    sign = 1.0 if kind == "payer" else -1.0
    live = tau_bar > 0
    sd = vol * np.sqrt(np.where(live, tau_bar, 1.0))
    with np.errstate(divide="ignore"):
        d = (np.log(forward / strike) + 0.5 * sd * sd) / sd
    e = d - sd
    value = sign * (ndtr(sign * d) * forward - ndtr(sign * e) * strike)
    intrinsic = np.maximum(sign * (forward - strike), 0.0)
    return np.where(live, value, intrinsic)


# ---------------------------------------------------------------------------
# scalar API


def survival_probability(spread: float, t: DateLike, theta: DateLike, lgd: float = 0.60) -> float:
    """P_S(t, theta) = exp(-S tau(t, theta) / LGD), tau in ACT/360."""
    if lgd <= 0:
        raise ValueError("LGD must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    return float(survival_kernel(spread, year_fraction(t, theta, "ACT/360"), lgd))


def annuity(spread: float, t: DateLike, schedule: CouponSchedule, lgd: float = 0.60) -> float:
    if lgd <= 0:
        raise ValueError("LGD must be positive")
    return float(annuity_kernel(spread, AnnuityLegs.at(t, schedule), lgd))


def accrued_fraction(t: DateLike) -> float:
    """Accrued coupon period, ACT/360 with the extra day; zero on a coupon date."""
    days = (_as_date(t) - previous_coupon_date(t)).days
    return 0.0 if days == 0 else (days + 1) / 360.0


def upfront(spread: float, t: DateLike, spec: IndexSpec) -> float:
    """Upfront per unit notional, received by the protection buyer."""
    sched = coupon_schedule(t, spec.maturity)
    a = annuity(spread, t, sched, spec.lgd)
    return (spec.coupon - spread) * a + spec.coupon * accrued_fraction(t)


def forward_annuity_legs(expiry: DateLike, spec: IndexSpec) -> AnnuityLegs:
    try:
        sched = coupon_schedule(expiry, spec.maturity)
    except ValueError as exc:
        raise ValueError(f"degenerate forward annuity at {expiry}: {exc}") from None
    return AnnuityLegs.at(expiry, sched)


def adjusted_forward(spread: float, t: DateLike, expiry: DateLike, spec: IndexSpec) -> float:
    """Forward spread corrected for protection running from ``t`` rather than expiry."""
    h = year_fraction(t, expiry, "ACT/360")
    legs = forward_annuity_legs(expiry, spec)
    a_fwd = annuity_kernel(spread, legs, spec.lgd)
    p = survival_kernel(spread, h, spec.lgd)
    return float(spread + spec.lgd * (1.0 - p) / a_fwd)


def option_price(kind: str, mkt: MarketState, opt: OptionSpec, spec: IndexSpec) -> float:
    """Black price on the adjusted forward, in currency units."""
    if mkt.t > opt.expiry:
        raise ValueError("valuation time after option expiry")
    legs = forward_annuity_legs(opt.expiry, spec)
    h = year_fraction(mkt.t, opt.expiry, "ACT/360")
    tau_bar = year_fraction(mkt.t, opt.expiry, "ACT/365")
    return float(_option_value(kind, mkt.spread, h, tau_bar, legs, opt, spec))


def _option_value(kind, spread, h_tT, tau_bar, legs_T, opt: OptionSpec, spec: IndexSpec):
    a_fwd = annuity_kernel(spread, legs_T, spec.lgd)
    p = survival_kernel(spread, h_tT, spec.lgd)
    fwd = spread + spec.lgd * (1.0 - p) / a_fwd
    return black_kernel(fwd, opt.strike, opt.vol, tau_bar, kind) * a_fwd * opt.notional


def hedge_ratio(mkt: MarketState, opt: OptionSpec, spec: IndexSpec, bump: float = DELTA_BUMP) -> float:
    """Delta hedge as a fraction of the index notional.

    Central differences of option price and upfront with a 0.01 bp bump. The
    upfront falls as spreads widen, so the ratio is reported with the sign
    flipped: a payer is hedged by buying ``N_h`` of index protection.
    """
    up = MarketState(mkt.t, mkt.spread + bump)
    dn = MarketState(mkt.t, mkt.spread - bump)
    d_opt = option_price(opt.kind, up, opt, spec) - option_price(opt.kind, dn, opt, spec)
    d_upf = upfront(up.spread, mkt.t, spec) - upfront(dn.spread, mkt.t, spec)
    if abs(d_upf / (2 * bump)) < _SINGULAR:
        raise ZeroDivisionError("upfront sensitivity is numerically zero")
    return -d_opt / (d_upf * spec.notional)


# ---------------------------------------------------------------------------
# grid pricer


class GridPricer:
    """Prices on every point of a trading grid for arrays of spread paths.

    Spread arrays have shape ``(n_paths, len(grid))`` (or ``(len(grid),)``).
    """

    def __init__(self, timestamps: Sequence[datetime], opt: OptionSpec, spec: IndexSpec):
        self.timestamps = tuple(timestamps)
        self.opt, self.spec = opt, spec
        if self.timestamps[-1] > opt.expiry:
            raise ValueError("grid extends beyond option expiry")
        self.legs_t = AnnuityLegs.stack([AnnuityLegs.at(t, coupon_schedule(t, spec.maturity)) for t in self.timestamps])
        self.accrued = np.array([accrued_fraction(t) for t in self.timestamps])
        self.legs_T = forward_annuity_legs(opt.expiry, spec)
        self.h_tT = np.array([year_fraction(t, opt.expiry, "ACT/360") for t in self.timestamps])
        self.tau_bar = np.array([year_fraction(t, opt.expiry, "ACT/365") for t in self.timestamps])

    def upfront(self, spread):
        a = annuity_kernel(spread, self.legs_t, self.spec.lgd)
        return (self.spec.coupon - np.asarray(spread)) * a + self.spec.coupon * self.accrued

    def option_price(self, spread, kind: str | None = None):
        return _option_value(kind or self.opt.kind, spread, self.h_tT, self.tau_bar, self.legs_T, self.opt, self.spec)

    def hedge_ratio(self, spread, bump: float = DELTA_BUMP):
        spread = np.asarray(spread, dtype=float)
        d_opt = self.option_price(spread + bump) - self.option_price(spread - bump)
        d_upf = self.upfront(spread + bump) - self.upfront(spread - bump)
        if np.any(np.abs(d_upf / (2 * bump)) < _SINGULAR):
            raise ZeroDivisionError("upfront sensitivity is numerically zero")
        return -d_opt / (d_upf * self.spec.notional)
