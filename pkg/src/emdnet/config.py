"""Training configuration and its ``key = value`` text format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ArchConfig

_BOOL_TRUE = {"on", "true", "yes", "1"}
_BOOL_FALSE = {"off", "false", "no", "0"}


@dataclass(frozen=True)
class TrainConfig:
    n_triplets: int = 2000
    batch_size: int = 8
    r: int = 4
    image_size: int = 32
    base_channels: int = 8
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iterations: int = 2000
    seed: int = 0
    skip_connections: bool = True
    loss_weighting: str = "weighted"
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    threshold: float = 0.5
    split_triplets: bool = False

    def __post_init__(self):
        positive = ("n_triplets", "batch_size", "r", "image_size", "base_channels", "lr")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("max_iterations", "seed", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.loss_weighting not in ("weighted", "plain"):
            raise ConfigError(f"loss_weighting must be 'weighted' or 'plain', got {self.loss_weighting!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.epsilon > 0):
            raise ConfigError("adam betas must lie in [0, 1) and epsilon must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")

    def arch(self) -> ArchConfig:
        r = 1 if self.split_triplets else self.r
        return ArchConfig(self.image_size, self.base_channels, r, self.skip_connections)

    def seed_streams(self) -> tuple[int, int, int]:
        """Independent (init, reference-pool, batch-order) seeds derived from ``seed``."""
        ss = np.random.SeedSequence(self.seed)
        return tuple(int(c.generate_state(1)[0]) for c in ss.spawn(3))

    def with_updates(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "skip_connections":
                v = "on" if v else "off"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        return (base or cls()).with_updates(**parse_pairs(text))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def as_dict(self) -> dict:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def convert(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} ({kind})") from None


def parse_pairs(text: str) -> dict:
    """``key = value`` lines (``#`` comments, blank lines ignored) into typed values."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = convert(k, v)
    return out
