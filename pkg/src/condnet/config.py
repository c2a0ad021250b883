"""Flat ``key = value`` configuration files.

Every hyperparameter has a named key; defaults are the reference settings
(dims 256/128/100, fan-outs 20/20, lr 0.003, batch 128, 5 negatives,
lambda 1e-4).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .exceptions import ConfigError


@dataclass
class TrainConfig:
    dims: tuple = (256, 128, 100)
    fanouts: tuple = (20, 20)
    attention_dim: int = 64
    learning_rate: float = 0.003
    batch_size: int = 128
    negatives: int = 5
    reg: float = 1e-4
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    init_std: float = 0.01
    mask_init_range: float = 0.5
    variant: str = "full"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_negatives: int = 100
    eval_k: int = 5
    inference: str = "full"
    split_ratios: tuple = (0.7, 0.1, 0.2)
    min_links: int = 2
    min_records: int = 2
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.fanouts = tuple(int(n) for n in self.fanouts)
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        self.validate()

    def validate(self):
        if not self.dims or min(self.dims) <= 0:
            raise ConfigError(f"dims must be positive, got {self.dims}")
        if len(self.fanouts) != len(self.dims) - 1:
            raise ConfigError(f"need {len(self.dims) - 1} fanouts for dims {self.dims}, got {self.fanouts}")
        if self.fanouts and min(self.fanouts) <= 0:
            raise ConfigError("fanouts must be positive")
        for name in ("attention_dim", "batch_size", "negatives", "epochs", "eval_negatives", "eval_k"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        reals = ("learning_rate", "reg", "init_std", "mask_init_range", "beta1", "beta2", "adam_eps")
        bad = [n for n in reals if not math.isfinite(float(getattr(self, n)))]
        if bad:
            raise ConfigError(f"non-finite value for {', '.join(bad)}")
        if self.learning_rate <= 0 or self.reg < 0 or self.patience < 0:
            raise ConfigError("learning_rate must be positive, reg and patience non-negative")
        if self.inference not in ("full", "sampled"):
            raise ConfigError(f"inference must be 'full' or 'sampled', got {self.inference!r}")

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("extra")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _coerce(name, default, raw):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [x for x in raw.replace(",", " ").replace("[", " ").replace("]", " ").split()]
            return tuple(type(default[0])(x) if default else float(x) for x in parts)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text: str, base: TrainConfig = None) -> TrainConfig:
    base = base or TrainConfig()
    defaults = base.to_dict()
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        changes[key] = _coerce(key, defaults[key], raw)
    return base.replace(**changes)


def read_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, (tuple, list)):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_config(path, cfg: TrainConfig):
    with open(path, "w") as fh:
        fh.write(format_config(cfg))
