"""Run configuration: JSON sections mapped onto dataclasses, validated up front.

Sections: ``backbone``, ``audio``, ``localization``, ``fusion`` (the model),
``loss``, ``optimizer``, ``train``, ``data`` and ``gradcheck``. Every section
is optional; omitted keys take the desk-scale defaults. Unknown sections or
keys and out-of-range values raise :class:`~stavis.errors.ConfigError`.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from stavis.audio import AudioNetConfig
from stavis.errors import ConfigError
from stavis.losses import LossWeights
from stavis.model import FusionConfig, LocalizationConfig, ModelConfig
from stavis.visual import BackboneConfig

BUILTIN = ("desk", "paper_shape")


@dataclass
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    # fractions of the epoch budget at which the rate is multiplied by gamma
    milestones: tuple[float, ...] = (0.6, 0.85)
    gamma: float = 0.1
    # global gradient-norm cap; the pixel-summed CE term gives large early gradients
    clip_norm: float | None = 10.0

    def __post_init__(self):
        self.milestones = tuple(float(m) for m in self.milestones)
        if not self.lr > 0:
            raise ConfigError("optimizer.lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("optimizer.momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("optimizer.weight_decay must be nonnegative")
        if any(not 0 < m < 1 for m in self.milestones) or list(self.milestones) != sorted(self.milestones):
            raise ConfigError("optimizer.milestones must be increasing fractions in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ConfigError("optimizer.gamma must lie in (0, 1]")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("optimizer.clip_norm must be positive or null")


@dataclass
class LossConfig:
    w1: float = 0.1  # cross-entropy
    w2: float = 2.0  # correlation
    w3: float = 1.0  # normalized scanpath saliency

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ConfigError("loss weights must be nonnegative")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w1, self.w2, self.w3)


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 60
    max_steps: int | None = None
    patience: int = 10
    seed: int = 0
    # parameter-name prefixes that are set to zero before training
    zero: tuple[str, ...] = ()
    # parameter-name prefixes the optimizer never updates
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        self.zero, self.frozen = tuple(self.zero), tuple(self.frozen)
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("train.batch_size and train.epochs must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("train.max_steps must be positive or null")
        if self.patience < 1:
            raise ConfigError("train.patience must be positive")
        if self.seed < 0:
            raise ConfigError("train.seed must be nonnegative")


@dataclass
class DataConfig:
    manifests: tuple[str, ...] = ()
    splits: str | None = None
    fold: int = 0
    n_folds: int = 3
    # Gaussian sigma for dense maps, as a fraction of max(H, W)
    sigma_frac: float = 0.035
    chunk: int = 90

    def __post_init__(self):
        self.manifests = tuple(self.manifests)
        if self.fold < 0 or self.n_folds < 2 or self.fold >= self.n_folds:
            raise ConfigError("data.fold must index one of data.n_folds (>= 2) folds")
        if not 0 < self.sigma_frac < 1:
            raise ConfigError("data.sigma_frac must lie in (0, 1)")
        if self.chunk < 16:
            raise ConfigError("data.chunk must hold at least one 16-frame clip")


@dataclass
class GradcheckConfig:
    seeds: int = 20
    h: float = 1e-5
    tol: float = 1e-4
    # probed entries per input tensor
    max_elements: int = 6

    def __post_init__(self):
        if self.seeds < 1 or self.max_elements < 1:
            raise ConfigError("gradcheck.seeds and gradcheck.max_elements must be positive")
        if not 1e-7 <= self.h <= 1e-3:
            raise ConfigError("gradcheck.h must lie in [1e-7, 1e-3]")
        if not self.tol > 0:
            raise ConfigError("gradcheck.tol must be positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    def to_json(self) -> dict:
        m = self.model
        doc = {
            "backbone": dataclasses.asdict(m.backbone),
            "audio": dataclasses.asdict(m.audio),
            "localization": dataclasses.asdict(m.localization),
            "fusion": dataclasses.asdict(m.fusion),
            "loss": dataclasses.asdict(self.loss),
            "optimizer": dataclasses.asdict(self.optimizer),
            "train": dataclasses.asdict(self.train),
            "data": dataclasses.asdict(self.data),
            "gradcheck": dataclasses.asdict(self.gradcheck),
        }
        # JSON object keys must be strings
        doc["audio"]["pools"] = {str(k): list(v) for k, v in doc["audio"]["pools"].items()}
        return json.loads(json.dumps(doc))


_SECTIONS = {
    "backbone": BackboneConfig,
    "audio": AudioNetConfig,
    "localization": LocalizationConfig,
    "fusion": FusionConfig,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "gradcheck": GradcheckConfig,
}


def _build(name: str, cls, values: Any):
    if not isinstance(values, Mapping):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def config_from_dict(doc: Mapping) -> RunConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    parts = {name: _build(name, cls, doc.get(name, {})) for name, cls in _SECTIONS.items()}
    model = ModelConfig(parts.pop("backbone"), parts.pop("audio"), parts.pop("localization"), parts.pop("fusion"))
    return RunConfig(model=model, **parts)


def load_config(path) -> RunConfig:
    """Load a JSON config file, or a built-in one by name (``desk``, ``paper_shape``)."""
    if str(path) in BUILTIN:
        text = resources.files("stavis.configs").joinpath(f"{path}.json").read_text()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
