"""Training configuration: nested dataclasses with strict JSON loading and flat overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .augment import AugConfig
from .losses import LossWeights
from .networks import NetworkConfig

FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train_count: int = 200
    val_count: int = 20
    width: int = 64
    height: int = 64
    seed: int = 0  # scene generation; held-out scenes use seed + 1

    def __post_init__(self):
        if self.width % 16 or self.height % 16:
            raise ValueError("image size must be divisible by 16")
        if self.train_count < 1 or self.val_count < 0:
            raise ValueError("dataset counts must be positive")


@dataclass
class Phase1Config:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("phase1 needs steps >= 0, batch_size >= 1 and lr > 0")


@dataclass
class Phase2Config:
    steps: int = 200
    batch_size: int = 2
    lr: float = 1e-4
    resolution_multiplier: int = 2
    frozen_groups: list = field(default_factory=lambda: ["pose"])
    reset_adam: bool = True

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("phase2 needs steps >= 0, batch_size >= 1 and lr > 0")
        if self.resolution_multiplier < 2:
            raise ValueError("phase 2 resolution must exceed phase 1 (multiplier >= 2)")


@dataclass
class TrainConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    aug: AugConfig = field(default_factory=AugConfig)
    phase1: Phase1Config = field(default_factory=Phase1Config)
    phase2: Phase2Config = field(default_factory=Phase2Config)
    checkpoint_every: int = 500
    preview_count: int = 4

    def __post_init__(self):
        known = {"encoder", "decoder", "attention", "pose"}
        bad = set(self.phase2.frozen_groups) - known
        if bad:
            raise ValueError(f"unknown frozen groups {sorted(bad)}; groups are {sorted(known)}")
        if "attention" in self.phase2.frozen_groups and not self.model.attention_enabled:
            raise ValueError("cannot freeze the attention group when attention is disabled")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    # ------------------------------------------------------------ (de)serial
    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        version = d.pop("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported config format_version {version}")
        return _build(cls, d, "")

    @classmethod
    def load(cls, path) -> TrainConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def with_overrides(self, overrides) -> TrainConfig:
        """Apply ``section.key=value`` strings; values parse as JSON, else as bare strings."""
        d = asdict(self)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = d
            parts = key.strip().split(".")
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return TrainConfig.from_dict(d)


def _build(cls, d: dict, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    for name, value in d.items():
        sub = _SECTIONS.get(name) if cls is TrainConfig else None
        kwargs[name] = _build(sub, value, f"{prefix}{name}.") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


_SECTIONS = {
    "data": DataConfig,
    "model": NetworkConfig,
    "loss": LossWeights,
    "aug": AugConfig,
    "phase1": Phase1Config,
    "phase2": Phase2Config,
}
