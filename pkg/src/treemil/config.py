"""Run configuration and the flat ``key=value`` file format shared by configs and synth specs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .attention import AttentionConfig
from .discriminator import POOLS


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class RunConfig:
    T: int = 64
    N: int = 2
    l: int = 3
    K: int = 2
    d: int = 128
    heads: int = 4
    ffn_hidden: int = 0  # 0 means 4 * d
    pool: str = "max"
    threshold: float = 0.5
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 32
    epochs: int = 100
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        self.validate()

    @property
    def d_K(self):
        return self.d // self.heads

    @property
    def ffn_width(self):
        return self.ffn_hidden or 4 * self.d

    def attention(self):
        return AttentionConfig(l=self.l, K=self.K, d=self.d, heads=self.heads, ffn_hidden=self.ffn_width)

    def validate(self):
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.T >= 1, "T", f"must be >= 1, got {self.T}")
        need(self.N >= 2, "N", f"must be >= 2, got {self.N}")
        need(self.l >= 0, "l", f"must be >= 0, got {self.l}")
        need(self.K >= 1, "K", f"must be >= 1, got {self.K}")
        need(self.d >= 1, "d", f"must be >= 1, got {self.d}")
        need(self.heads >= 1 and self.d % self.heads == 0, "heads", f"must divide d={self.d}, got {self.heads}")
        need(self.ffn_hidden >= 0, "ffn_hidden", f"must be >= 0, got {self.ffn_hidden}")
        need(self.pool in POOLS, "pool", f"must be one of {POOLS}, got {self.pool!r}")
        need(0 < self.threshold < 1, "threshold", f"must lie in (0, 1), got {self.threshold}")
        need(self.lr > 0, "lr", f"must be positive, got {self.lr}")
        need(0 < self.beta1 < 1, "beta1", f"must lie in (0, 1), got {self.beta1}")
        need(0 < self.beta2 < 1, "beta2", f"must lie in (0, 1), got {self.beta2}")
        need(self.eps > 0, "eps", f"must be positive, got {self.eps}")
        need(self.batch >= 1, "batch", f"must be >= 1, got {self.batch}")
        need(self.epochs >= 0, "epochs", f"must be >= 0, got {self.epochs}")
        need(0 < self.train_fraction < 1, "train_fraction", f"must lie in (0, 1), got {self.train_fraction}")

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def parse_kv(text):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(key, f"duplicate key on line {lineno}")
        out[key] = value
    return out


def coerce_fields(cls, raw):
    """Convert string values to the dataclass field types; unknown keys are errors."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(key, f"unknown key (expected one of {', '.join(fields)})")
        kind = fields[key].type
        try:
            if kind in ("int", int):
                values[key] = int(value)
            elif kind in ("float", float):
                values[key] = float(value)
            elif kind in ("bool", bool):
                values[key] = value.lower() in ("1", "true", "yes")
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(key, f"cannot parse {value!r} as {kind}") from None
    return values


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        values = coerce_fields(RunConfig, parse_kv(fh.read()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def format_kv(mapping):
    return "".join(f"{k}={v}\n" for k, v in mapping.items())
