"""Flat ``key = value`` run configuration with validation."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .family import FAMILIES
from .grid import KERNELS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    family: str = "poisson-log"
    d: int = 2
    grid_points: int = 41
    kernel: str = "epanechnikov"
    L: int = 10
    L_pilot: int = 10
    G: float = 0.5
    R: float = 0.5
    eps_outer: float = 1e-6
    eps_inner: float = 1e-8
    max_outer: int = 50
    max_inner: int = 100
    max_step: float = 5.0
    bandwidth: str = "pilot"  # "pilot", a number, comma list, or path to a schedule CSV
    input: str = "simulation"  # "simulation" or a CSV path
    blocks: int = 200
    block_mean: float = 100.0
    block_sd: float = 10.0
    output: str = "out"
    seed: int = 0
    snapshot_every: int = 0

    def validate(self) -> "RunConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {sorted(FAMILIES)}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {sorted(KERNELS)}")
        for name in ("d", "grid_points", "L", "L_pilot", "max_outer", "max_inner", "blocks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be at least 2")
        for name in ("G", "R", "eps_outer", "eps_inner", "max_step", "block_mean"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.block_sd < 0 or self.snapshot_every < 0:
            raise ConfigError("block_sd and snapshot_every must be non-negative")
        return self

    def updated(self, **overrides) -> "RunConfig":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cast = {k: _cast(self, k, v) for k, v in overrides.items() if v is not None}
        return replace(self, **cast).validate()


def _cast(cfg, key, value):
    kind = type(getattr(cfg, key))
    if isinstance(value, kind):
        return value
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"config line {no}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the file (if any), then non-None overrides."""
    cfg = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = cfg.updated(**parse_config(fh.read()))
    return cfg.updated(**{k: v for k, v in overrides.items() if v is not None})
