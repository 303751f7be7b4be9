"""Run configuration: INI-style sections of ``key = value`` pairs.

Every key has a type and default below; unknown sections or keys are
rejected. The resolved configuration (defaults, file, then command-line
overrides) is written next to the outputs so a run can be repeated from it.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Callable, Optional


class ConfigError(ValueError):
    pass


def _date(s: str) -> date:
    return date.fromisoformat(s.strip())


def _opt_date(s: str) -> Optional[date]:
    return _date(s) if s.strip() else None


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "seed": (int, 0),
        "threads": (int, 1),
    },
    "grid": {
        "start": (_date, date(2021, 3, 22)),
        "days": (int, 40),
        "steps_per_day": (int, 17),
    },
    "index": {
        "maturity": (_opt_date, None),
        "coupon_bp": (float, 100.0),
        "lgd": (float, 0.60),
        "notional": (float, 100e6),
    },
    "option": {
        "kind": (str, "payer"),
        "strike_bp": (float, 100.0),
        "vol": (float, 0.60),
        "position": (str, "short_option"),
        "initial_hedge": (str, "delta"),
        "unwind_at_expiry": (_bool, False),
    },
    "market": {
        "model": (str, "gbm"),
        "episodes": (int, 2000),
        "s0_bp": (float, 100.0),
        "mu": (float, 0.0),
        "sigma": (float, 0.60),
        "v0": (float, 0.36),
        "kappa": (float, 2.0),
        "theta": (float, 0.36),
        "xi": (float, 0.9),
        "rho": (float, 0.0),
    },
    "costs": {
        "ba_bp": (float, 1.0),
    },
    "train": {
        "preset": (str, "desk"),
        "lambda": (float, 4.0),
        "gamma": (float, 0.999),
        "max_kl": (float, 0.01),
        "batch_size": (int, 64),
        "iterations": (int, 0),
        "init_log_std": (float, math.log(0.2)),
    },
    "evaluate": {
        "checkpoint": (str, ""),
        "test_seed": (int, 20_000),
        "bin_width_eur": (float, 10_000.0),
        "series": (str, ""),
        "align": (str, "expiry"),
    },
    "frontier": {
        "lambdas": (_floats, (1.0, 2.0, 4.0, 10.0, 25.0)),
        "ba_grid": (_floats, (0.5, 1.0, 1.5, 2.0)),
    },
    "clean": {
        "quotes": (str, ""),
        "output": (str, ""),
        "method": (str, "sigma"),
    },
}

CHOICES = {
    ("option", "kind"): ("payer", "receiver"),
    ("option", "position"): ("short_option", "long_option"),
    ("option", "initial_hedge"): ("delta", "flat"),
    ("market", "model"): ("gbm", "heston"),
    ("train", "preset"): ("desk", "full"),
    ("evaluate", "align"): ("expiry", "consecutive"),
    ("clean", "method"): ("sigma", "median"),
}

PRESET_ITERATIONS = {"desk": 63, "full": 625}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @classmethod
    def load(cls, path: Optional[str | Path] = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path) as fh:
                    parser.read_file(fh)
            except (OSError, configparser.Error) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg.set(section, key, raw)
        return cfg

    def set(self, section: str, key: str, raw: Any) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {key!r} in [{section}]")
        parse = SCHEMA[section][key][0]
        if isinstance(raw, str):
            try:
                value = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        else:
            value = raw
        self.values[section][key] = value

    def validate(self) -> "RunConfig":
        for (section, key), allowed in CHOICES.items():
            if self.values[section][key] not in allowed:
                raise ConfigError(f"[{section}] {key} must be one of {', '.join(allowed)}")
        v = self.values
        checks = [
            (v["run"]["threads"] >= 1, "[run] threads must be >= 1"),
            (v["grid"]["days"] >= 1, "[grid] days must be >= 1"),
            (v["grid"]["steps_per_day"] >= 2, "[grid] steps_per_day must be >= 2"),
            (v["grid"]["start"].weekday() < 5, "[grid] start must be a weekday"),
            (v["market"]["episodes"] >= 1, "[market] episodes must be >= 1"),
            (v["market"]["s0_bp"] > 0, "[market] s0_bp must be positive"),
            (v["option"]["strike_bp"] > 0, "[option] strike_bp must be positive"),
            (v["option"]["vol"] > 0, "[option] vol must be positive"),
            (v["costs"]["ba_bp"] >= 0, "[costs] ba_bp must be non-negative"),
            (v["train"]["lambda"] >= 0, "[train] lambda must be non-negative"),
            (0 < v["train"]["gamma"] <= 1, "[train] gamma must lie in (0, 1]"),
            (v["train"]["max_kl"] > 0, "[train] max_kl must be positive"),
            (v["train"]["batch_size"] >= 1, "[train] batch_size must be >= 1"),
            (v["train"]["iterations"] >= 0, "[train] iterations must be >= 0"),
            (v["evaluate"]["bin_width_eur"] > 0, "[evaluate] bin_width_eur must be positive"),
            (len(v["frontier"]["lambdas"]) > 0, "[frontier] lambdas must not be empty"),
            (all(b >= 0 for b in v["frontier"]["ba_grid"]), "[frontier] ba_grid must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @property
    def iterations(self) -> int:
        t = self.values["train"]
        return t["iterations"] or PRESET_ITERATIONS[t["preset"]]

    def dumps(self) -> str:
        out = io.StringIO()
        for section, keys in self.values.items():
            out.write(f"[{section}]\n")
            for k, v in keys.items():
                out.write(f"{k} = {_fmt(v)}\n")
            out.write("\n")
        return out.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())
