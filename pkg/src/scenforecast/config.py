"""Experiment configuration: nested dataclasses with JSON round-tripping and dotted overrides."""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

import numpy as np

from .objectives import LossWeights


@dataclass
class DataConfig:
    profile: str = "wind"          # wind | pv
    days: int = 120
    resolution: int = 60           # minutes
    n_sites: int = 2
    case: str = "A"                # info channel preset
    n_t: int = 48                  # window length N_T
    n_known: int = 24              # lagging length kept in the decoder window
    stride: int = 6
    seed: int = 1
    start: str = "2012-01-01T00:00"


@dataclass
class ModelConfig:
    n_m: int = 32
    n_heads: int = 4
    n_enc: int = 2
    n_dec: int = 2
    d_ff: int = 64
    d_z: int = 16
    style_hidden: int = 32
    attention: str = "probsparse"
    use_embedding: bool = True
    spatial: bool = True
    minibatch_std: bool = True
    d_channels: tuple = (16, 32, 32)


@dataclass
class TrainConfig:
    n_epochs: int = 5000
    lr: float = 0.0008
    batch_size: int = 32
    n_d: int = 2
    n_f: int = 8
    n_n: int = 2
    p_dropout: float = 0.2
    seed: int = 0
    checkpoint_every: int = 100
    epoch_mode: str = "iteration"  # iteration: one outer step per epoch; pass: full data pass
    clip_norm: float = 10.0
    r1_squared: bool = False
    validate_every: int = 50
    val_n_f: int = 4
    val_n_n: int = 1
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for k in ("n_epochs", "batch_size", "n_d", "n_f", "n_n", "checkpoint_every", "validate_every",
                  "val_n_f", "val_n_n"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1, got {getattr(self, k)}")
        if self.epoch_mode not in ("iteration", "pass"):
            raise ValueError(f"epoch_mode must be 'iteration' or 'pass', got {self.epoch_mode!r}")
        if not 0.0 <= self.p_dropout < 1.0:
            raise ValueError("p_dropout must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def override(self, assignments) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings (value parsed as JSON when possible)."""
        d = self.to_dict()
        for a in assignments:
            if "=" not in a:
                raise ValueError(f"override {a!r} is not of the form key=value")
            key, raw = a.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            set_path(d, key, value)
        return ExperimentConfig.from_dict(d)


def _jsonable(o):
    if isinstance(o, tuple):
        return list(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def set_path(d: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise KeyError(f"unknown config key {dotted!r}")
        node = node[p]
    if parts[-1] not in node:
        raise KeyError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def _build(cls, d: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in d.items():
        current = getattr(defaults, name)
        if is_dataclass(current) and isinstance(value, dict):
            kwargs[name] = _build(type(current), value)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return replace(defaults, **kwargs)


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def desk_config(**train_overrides) -> ExperimentConfig:
    """Small-scale setting used by the acceptance suite and desk scripts."""
    train = TrainConfig(n_epochs=300, batch_size=16, validate_every=50, checkpoint_every=100)
    return ExperimentConfig(DataConfig(), ModelConfig(), replace(train, **train_overrides))
