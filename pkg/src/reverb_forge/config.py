"""Run configuration: defaults, a key = value file format and precedence.

Precedence, highest first: command-line flag, config file, the
``REVERB_FORGE_SEED`` environment variable (seed only), built-in default.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .seeding import SEED_MAX

SEED_ENV = "REVERB_FORGE_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    t_0: float = 0.0025
    t60_range: tuple[float, float] = (0.02, 2.0)
    drr_range: tuple[float, float] = (-10.0, 30.0)
    p_apply: float = 0.99
    scale_range: tuple[float, float] = (0.4, 1.0)
    fit_range: tuple[float, float] = (-5.0, -25.0)
    grid_bins: tuple[int, int] = (8, 8)

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int) or not 0 <= self.seed <= SEED_MAX:
            raise ConfigError(f"seed must be an integer in [0, 2**64 - 1], got {self.seed!r}")
        if not (math.isfinite(self.t_0) and self.t_0 > 0):
            raise ConfigError(f"t_0 must be positive, got {self.t_0}")
        lo, hi = self.t60_range
        if not 0 < lo < hi:
            raise ConfigError(f"t60_range must satisfy 0 < lo < hi, got {self.t60_range}")
        lo, hi = self.drr_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigError(f"drr_range must satisfy lo < hi, got {self.drr_range}")
        if not 0.0 <= self.p_apply <= 1.0:
            raise ConfigError(f"p_apply must lie in [0, 1], got {self.p_apply}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"scale_range must satisfy 0 < lo <= hi <= 1, got {self.scale_range}")
        hi_db, lo_db = self.fit_range
        if not lo_db < hi_db <= 0:
            raise ConfigError(f"fit_range must be (upper, lower) with lower < upper <= 0 dB, got {self.fit_range}")
        if any(not isinstance(b, int) or b < 1 for b in self.grid_bins):
            raise ConfigError(f"grid_bins must be positive integers, got {self.grid_bins}")
        return self

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


_FIELDS = {f.name: f for f in fields(RunConfig)}
_PAIRS = {"t60_range": float, "drr_range": float, "scale_range": float, "fit_range": float, "grid_bins": int}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format(getattr(cfg, k))}\n" for k in _FIELDS)


def _parse_int(text: str, key: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _parse_float(text: str, key: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: value must be finite")
    return v


def parse_value(key: str, text: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    if key in _PAIRS:
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"{key}: expected two comma-separated values, got {text!r}")
        conv = _parse_int if _PAIRS[key] is int else _parse_float
        return tuple(conv(p, key) for p in parts)
    if key == "seed":
        return _parse_int(text, key)
    return _parse_float(text, key)


def loads(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Returns only the keys present."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(key, value)
    return out


def load_file(path: str | Path) -> dict:
    return loads(Path(path).read_text())


def save(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg))


def resolve_config(flags: dict | None = None, path: str | Path | None = None, env=None) -> RunConfig:
    """Merge the layers; ``flags`` entries that are None are treated as unset."""
    env = os.environ if env is None else env
    values = {}
    if env.get(SEED_ENV, "").strip():
        values["seed"] = _parse_int(env[SEED_ENV].strip(), SEED_ENV)
    if path is not None:
        values.update(load_file(path))
    for k, v in (flags or {}).items():
        if v is None:
            continue
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = tuple(v) if isinstance(v, list) else v
    return replace(RunConfig(), **values).validate()
