"""YAML run configuration.

A config file is a mapping with up to four sections, each optional::

    model:     ModelConfig fields; ``stages`` is a list of {sf, mult, n2d, kind2d, kind1d}
    loss:      kind, scale, margin, subcenters, lambda, t
    train:     TrainConfig fields
    features:  FeatureConfig fields

Missing keys take their defaults; unknown keys are errors.  Shipped configs can
be referenced by bare name (``b0_candidate``) instead of a path.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError
from .features import FeatureConfig
from .losses import LossConfig
from .model import ModelConfig
from .train import TrainConfig

SECTIONS = ("model", "loss", "train", "features")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "loss": self.loss.to_dict(), "train": self.train.to_dict(),
                "features": self.features.to_dict()}


def shipped_configs() -> list[str]:
    root = resources.files("redimnet") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _features_from_dict(d: dict) -> FeatureConfig:
    unknown = sorted(set(d) - {f.name for f in fields(FeatureConfig)})
    if unknown:
        raise ConfigError(f"unknown features keys: {unknown}")
    try:
        return FeatureConfig(**d)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def from_dict(doc) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config must be a mapping of sections, got {type(doc).__name__}")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections {unknown}; expected {list(SECTIONS)}")
    for s in SECTIONS:
        if doc.get(s) is not None and not isinstance(doc[s], dict):
            raise ConfigError(f"section '{s}' must be a mapping")
    return RunConfig(
        model=ModelConfig.from_dict(doc.get("model") or {}),
        loss=LossConfig.from_dict(doc.get("loss") or {}),
        train=TrainConfig.from_dict(doc.get("train") or {}),
        features=_features_from_dict(doc.get("features") or {}),
    )


def loads(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    return from_dict(doc)


def load(name_or_path) -> RunConfig:
    """Load a config file, or a shipped config by bare name."""
    p = Path(name_or_path)
    if p.is_file():
        text = p.read_text()
    else:
        shipped = resources.files("redimnet") / "configs" / f"{name_or_path}.yaml"
        if not shipped.is_file():
            raise ConfigError(f"no config file '{name_or_path}' (shipped configs: {', '.join(shipped_configs())})")
        text = shipped.read_text()
    try:
        return loads(text)
    except ConfigError as e:
        raise ConfigError(f"{name_or_path}: {e}") from None


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
