"""Run configuration: dataclasses for every pipeline stage plus strict YAML I/O.

A run is described by a single declarative file. Unknown keys are rejected so
typos cannot silently fall back to defaults, and every command echoes the file
verbatim into its output directory.
"""

from __future__ import annotations

import dataclasses
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

NEIGHBORHOOD_SIZE = 8  # a tile has at most 8 axis-aligned/diagonal neighbors

LOSS_VARIANTS = ("naive", "dcl")


@dataclass(frozen=True)
class CorpusConfig:
    """Synthetic tiled-slide corpus layout and extraction quotas.

    ``patches_per_slide`` is the per-slide unlabeled patch budget shared by
    every neighbor-count variant: a variant with N neighbors per center gets
    ``patches_per_slide // (N + 1)`` centers, so total patch counts stay equal
    across variants up to integer rounding.
    """

    unlabeled_slides: int = 8
    train_slides: int = 2
    test_slides: int = 2
    slide_size: int = 1536
    patch_size: int = 64
    num_classes: int = 6
    patches_per_slide: int = 125
    nearby_counts: tuple[int, ...] = (0, 4)
    labeled_per_slide: int | None = None  # None = full non-overlapping grid

    def validate(self) -> None:
        if self.unlabeled_slides < 1 or self.train_slides < 1 or self.test_slides < 1:
            raise ConfigError("corpus needs at least one slide per split")
        if self.num_classes < 2 or self.num_classes > 255:
            raise ConfigError("num_classes must be in [2, 255]")
        if self.patch_size < 4:
            raise ConfigError("patch_size must be >= 4")
        if self.slide_size % self.patch_size != 0:
            raise ConfigError("slide_size must be a multiple of patch_size")
        if self.slide_size < 3 * self.patch_size:
            raise ConfigError("slide_size must be >= 3 * patch_size")
        if self.patches_per_slide < 1:
            raise ConfigError("patches_per_slide must be >= 1")
        for n in self.nearby_counts:
            if not 0 <= n <= NEIGHBORHOOD_SIZE:
                raise ConfigError(
                    f"nearby count {n} outside [0, {NEIGHBORHOOD_SIZE}]"
                )
        if len(set(self.nearby_counts)) != len(self.nearby_counts):
            raise ConfigError("nearby_counts contains duplicates")
        if self.labeled_per_slide is not None and self.labeled_per_slide < 1:
            raise ConfigError("labeled_per_slide must be >= 1 when set")

    def centers_for(self, nearby_count: int) -> int:
        """Centers per slide for one variant: floor(budget / (N + 1))."""
        return self.patches_per_slide // (nearby_count + 1)

    @property
    def num_slides(self) -> int:
        return self.unlabeled_slides + self.train_slides + self.test_slides


@dataclass(frozen=True)
class AugmentPolicy:
    """Stochastic two-view augmentation used during pretraining."""

    target_size: int = 128
    crop_scale: tuple[float, float] = (0.2, 1.0)
    flip_prob: float = 0.5
    jitter: tuple[float, float, float] = (0.4, 0.4, 0.4)  # brightness, contrast, saturation
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2

    def validate(self) -> None:
        if self.target_size <= 0:
            raise ConfigError("target_size must be positive")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError("crop_scale must satisfy 0 < lo <= hi <= 1")
        for name, p in (
            ("flip_prob", self.flip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
        ):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if any(s < 0 for s in self.jitter):
            raise ConfigError("jitter strengths must be >= 0")


@dataclass(frozen=True)
class EvalTransform:
    """Deterministic transform applied before frozen-encoder evaluation."""

    resize_size: int = 256
    crop_size: int = 224
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def validate(self) -> None:
        if self.crop_size <= 0 or self.resize_size <= 0:
            raise ConfigError("resize_size and crop_size must be positive")
        if self.crop_size > self.resize_size:
            raise ConfigError("crop_size must be <= resize_size")
        if any(s <= 0 for s in self.std):
            raise ConfigError("std entries must be positive")


@dataclass(frozen=True)
class EncoderConfig:
    """Convolutional encoder shape.

    The ``desk`` preset is a small stride-2 conv stack with global average
    pooling, sized to train on one CPU core. The ``reference`` preset records
    the reference-scale backbone shape (ResNet-50, 2048-d features) for
    documentation; it is not buildable here.
    """

    preset: str = "desk"
    stage_channels: tuple[int, ...] = (32, 64, 128, 128)
    feature_dim: int = 128

    def validate(self) -> None:
        if self.preset not in ("desk", "reference"):
            raise ConfigError(f"unknown encoder preset {self.preset!r}")
        if self.feature_dim < 8:
            raise ConfigError("feature_dim must be >= 8")
        if self.preset == "desk" and len(self.stage_channels) < 1:
            raise ConfigError("desk preset needs at least one conv stage")

    @classmethod
    def reference_preset(cls) -> "EncoderConfig":
        return cls(preset="reference", stage_channels=(), feature_dim=2048)


@dataclass(frozen=True)
class ProjectionConfig:
    """Projection head mapping encoder features to unit-norm embeddings."""

    hidden_dim: int | None = 128  # None = single bias-free linear layer
    output_dim: int = 128

    def validate(self) -> None:
        if self.output_dim < 2:
            raise ConfigError("projection output_dim must be >= 2")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ConfigError("projection hidden_dim must be >= 1 when set")


@dataclass(frozen=True)
class TrainConfig:
    """Self-supervised pretraining hyperparameters.

    ``view_budget`` is the number of samples per view side, C * (N + 1); the
    number of center groups per batch is derived as floor(budget / (N + 1)),
    which keeps the per-step view count constant across neighbor counts.
    """

    base_lr: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    warmup_epochs: int = 10
    view_budget: int = 64
    nearby_count: int = 4
    temperature: float = 0.1
    variant: str = "dcl"
    checkpoint_every: int = 5

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("warmup_epochs must satisfy 0 <= warmup < epochs")
        if not 0 <= self.nearby_count <= NEIGHBORHOOD_SIZE:
            raise ConfigError("nearby_count outside [0, 8]")
        if self.centers_per_batch < 2:
            raise ConfigError(
                "view_budget too small: need at least 2 center groups per batch"
            )
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.variant not in LOSS_VARIANTS:
            raise ConfigError(f"variant must be one of {LOSS_VARIANTS}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    @property
    def centers_per_batch(self) -> int:
        return self.view_budget // (self.nearby_count + 1)

    @classmethod
    def reference_preset(cls) -> "TrainConfig":
        """Reference-scale settings (400 epochs, 512-sample view budget)."""
        return cls(epochs=400, view_budget=512)


@dataclass(frozen=True)
class EvalConfig:
    """Linear-probe protocol over label fractions and stratified folds."""

    fractions: tuple[float, ...] = (0.01, 0.1, 0.2, 1.0)
    epochs: int = 15
    lr: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 0.0
    folds: int = 5
    small_batch: int = 32
    large_batch: int = 512
    small_fraction_cutoff: float = 0.01

    def validate(self) -> None:
        if not self.fractions:
            raise ConfigError("fractions must be nonempty")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError("fractions must lie in (0, 1]")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.epochs < 1:
            raise ConfigError("eval epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("eval lr must be positive")
        if self.small_batch < 1 or self.large_batch < 1:
            raise ConfigError("batch sizes must be >= 1")

    def batch_size_for(self, fraction: float) -> int:
        return self.small_batch if fraction <= self.small_fraction_cutoff else self.large_batch


@dataclass(frozen=True)
class AblationConfig:
    """Grid of neighbor counts x loss variants evaluated at label fractions."""

    n_values: tuple[int, ...] = (0, 4)
    variants: tuple[str, ...] = ("dcl",)
    fractions: tuple[float, ...] = (1.0,)

    def validate(self) -> None:
        if not self.n_values or not self.variants or not self.fractions:
            raise ConfigError("ablation lists must be nonempty")
        for n in self.n_values:
            if not 0 <= n <= NEIGHBORHOOD_SIZE:
                raise ConfigError(f"ablation nearby count {n} outside [0, 8]")
        for v in self.variants:
            if v not in LOSS_VARIANTS:
                raise ConfigError(f"ablation variant must be one of {LOSS_VARIANTS}")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError("ablation fractions must lie in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    """Top-level declarative run description."""

    name: str = "desk"
    seed: int = 7
    output_dir: str = "runs/desk"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    augment: AugmentPolicy = field(default_factory=lambda: AugmentPolicy(target_size=32))
    eval_transform: EvalTransform = field(
        default_factory=lambda: EvalTransform(resize_size=64, crop_size=56)
    )
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    # Desk-scale LR/temperature: the reference-scale settings (base_lr 0.2,
    # tau 0.1) collapse the small desk encoder, so the run defaults are tuned
    # down; TrainConfig's own defaults keep the reference values.
    trainer: TrainConfig = field(
        default_factory=lambda: TrainConfig(base_lr=0.003, temperature=0.2)
    )
    lineval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        self.corpus.validate()
        self.augment.validate()
        self.eval_transform.validate()
        self.encoder.validate()
        self.projection.validate()
        self.trainer.validate()
        self.lineval.validate()
        self.ablation.validate()


_SECTION_TYPES = {
    "corpus": CorpusConfig,
    "augment": AugmentPolicy,
    "eval_transform": EvalTransform,
    "encoder": EncoderConfig,
    "projection": ProjectionConfig,
    "trainer": TrainConfig,
    "lineval": EvalConfig,
    "ablation": AblationConfig,
}


def _coerce(value: Any, annotation: Any, where: str) -> Any:
    # YAML has no tuple type; sequences destined for tuple fields are converted.
    if isinstance(value, list):
        return tuple(value)
    return value


def _dataclass_from_dict(cls: type, data: dict[str, Any], where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(value, fields[key].type, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def run_config_from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a mapping")
    known = {"name", "seed", "output_dir", *_SECTION_TYPES}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"run config: unknown keys {unknown}")
    kwargs: dict[str, Any] = {}
    for key in ("name", "seed", "output_dir"):
        if key in data:
            kwargs[key] = data[key]
    for key, cls in _SECTION_TYPES.items():
        if key in data:
            kwargs[key] = _dataclass_from_dict(cls, data[key], key)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    return run_config_from_dict(data)


def run_config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    def scrub(obj: Any) -> Any:
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: scrub(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [scrub(v) for v in obj]
        return obj

    return scrub(cfg)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(run_config_to_dict(cfg), sort_keys=False))


def echo_config(config_path: str | Path | None, cfg: RunConfig, out_dir: str | Path) -> None:
    """Copy the original config file verbatim into the output directory.

    Falls back to serializing the resolved config when the run was built
    without a file (e.g. pure-API use).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "config.yaml"
    if config_path is not None and Path(config_path) != target:
        shutil.copyfile(config_path, target)
    else:
        save_run_config(cfg, target)
