"""Experiment configuration: one TOML file fully describes a run."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import tomli

from ..errors import ConfigError
from ..imaging import CategoryTable, ResolutionCategory, load_categories
from ..nn import ModelSpec, TrainConfig, stage_architectures
from ..quanv import QuanvConfig
from .data import SyntheticCrackSpec

CACHE_ENV = "QUANVISION_CACHE_DIR"
STAGE_PATCH = {1: 2, 2: 4}


@dataclass(frozen=True)
class ModelConfig:
    """Shared knobs of the matched QNN / CNN stacks."""

    filters: int = 32
    kernel: int = 4
    extra_filters: int = 16
    dense_units: int = 32
    dropout: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    stage: int
    output_dir: Path
    seeds: tuple[int, ...] = (0,)
    dataset: Path | None = None  # None selects the synthetic generator
    synthetic: SyntheticCrackSpec = field(default_factory=SyntheticCrackSpec)
    resolutions: tuple[tuple[int, int], ...] = ()
    images_per_resolution: int = 4
    train_counts: tuple[int, ...] = (100, 50)
    test_count: int = 2000
    splits: tuple[float, ...] = (0.5, 0.4)
    crop: int | None = None
    quanv: QuanvConfig = field(default_factory=QuanvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    categories: CategoryTable | None = None
    positive_threshold: float = 0.01
    class_weighting: bool = False
    standardize_quantum: bool = False
    cache_dir: Path | None = None

    def __post_init__(self):
        if self.stage not in STAGE_PATCH:
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.quanv.patch_size != STAGE_PATCH[self.stage]:
            raise ConfigError(
                f"stage {self.stage} uses patch size {STAGE_PATCH[self.stage]}, got {self.quanv.patch_size}"
            )
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.stage == 1:
            if not self.train_counts or min(self.train_counts) <= 0 or self.test_count <= 0:
                raise ConfigError("train counts and test count must be positive")
        else:
            if not self.splits or not all(0 < s < 1 for s in self.splits):
                raise ConfigError(f"split train fractions must lie in (0, 1), got {self.splits}")
            if self.dataset is None and not self.resolutions:
                raise ConfigError("a synthetic stage-2 corpus needs at least one resolution")
        if self.crop is not None and self.crop < self.quanv.patch_size:
            raise ConfigError(f"crop {self.crop} smaller than the patch size")

    @property
    def cnn_input(self) -> tuple[int, int, int]:
        if self.stage == 1:
            h, w = self.synthetic.image_size
            return (h, w, 1)
        side = self._region_side()
        return (side, side, 1)

    @property
    def qnn_input(self) -> tuple[int, int, int]:
        h, w, _ = self.cnn_input
        if self.crop is not None:
            h = w = self.crop
        return self.quanv.output_shape(h, w)

    def _region_side(self) -> int:
        targets = {c.target for c in self.categories.categories} if self.categories else set()
        if len(targets) != 1:
            raise ConfigError("stage 2 needs a category table whose entries share one target size")
        return targets.pop() // 9

    def model_specs(self, seed: int) -> tuple[ModelSpec, ModelSpec]:
        m = self.model
        return stage_architectures(
            self.cnn_input, self.qnn_input, m.filters, m.kernel, m.extra_filters, m.dense_units, m.dropout, seed
        )

    def resolved_cache_dir(self) -> Path | None:
        return self.cache_dir


# ---- TOML ---------------------------------------------------------------

_TOP = {
    "stage", "output_dir", "cache_dir", "seeds", "data", "synthetic", "quanv", "model", "train", "categories",
}
_DATA = {
    "path", "train_counts", "test_count", "splits", "crop", "positive_threshold", "class_weighting",
    "categories_file", "resolutions", "images_per_resolution", "standardize_quantum",
}
_TRAIN = {"epochs", "batch_size", "learning_rate", "adam_betas", "adam_eps"}


def _strict(section: dict, allowed: set, name: str) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    return section


def _fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, section: dict, name: str, **fixed):
    try:
        return cls(**_strict(section, _fields(cls) - set(fixed), name), **fixed)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _cache_dir(raw: dict, path) -> Path | None:
    """The environment variable beats the file; CLI flags are applied later and beat both."""
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return path(raw["cache_dir"]) if raw.get("cache_dir") else None


def from_dict(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    _strict(raw, _TOP, "top level")
    if "stage" not in raw or "output_dir" not in raw:
        raise ConfigError("config needs 'stage' and 'output_dir'")
    data = _strict(dict(raw.get("data", {})), _DATA, "data")

    def path(value):
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    synth = dict(raw.get("synthetic", {}))
    if "image_size" in synth:
        synth["image_size"] = tuple(synth["image_size"])
    categories = None
    if "categories_file" in data and "categories" in raw:
        raise ConfigError("give either data.categories_file or [[categories]], not both")
    if "categories_file" in data:
        categories = load_categories(path(data["categories_file"]))
    elif "categories" in raw:
        rows = [_build(ResolutionCategory, dict(c), "categories") for c in raw["categories"]]
        categories = CategoryTable(tuple(rows))
    train = _strict(dict(raw.get("train", {})), _TRAIN, "train")
    if "adam_betas" in train:
        train["adam_betas"] = tuple(train["adam_betas"])
    seeds = tuple(int(s) for s in raw.get("seeds", (0,)))
    kwargs = dict(
        stage=int(raw["stage"]),
        output_dir=path(raw["output_dir"]),
        cache_dir=_cache_dir(raw, path),
        seeds=seeds,
        dataset=path(data["path"]) if data.get("path") else None,
        synthetic=_build(SyntheticCrackSpec, synth, "synthetic"),
        quanv=_build(QuanvConfig, dict(raw.get("quanv", {})), "quanv"),
        model=_build(ModelConfig, dict(raw.get("model", {})), "model"),
        train=_build(TrainConfig, train, "train", seed=seeds[0]),
        categories=categories,
    )
    for key in ("train_counts", "splits", "resolutions"):
        if key in data:
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in data[key])
    scalars = (
        "test_count", "crop", "positive_threshold", "class_weighting", "images_per_resolution", "standardize_quantum",
    )
    for key in scalars:
        if key in data:
            kwargs[key] = data[key]
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return from_dict(raw, path.parent)


def default_config(stage: int) -> ExperimentConfig:
    """The bundled configuration for ``stage``; relative paths resolve against the cwd."""
    name = {1: "stage1.toml", 2: "stage2.toml"}.get(stage)
    if name is None:
        raise ConfigError(f"stage must be 1 or 2, got {stage}")
    text = resources.files("quanvision.configs").joinpath(name).read_text()
    return from_dict(tomli.loads(text))


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply CLI overrides; ``None`` values leave the config untouched."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if "seeds" in changes:
        changes["seeds"] = tuple(changes["seeds"])
    for key in ("output_dir", "cache_dir", "dataset"):
        if key in changes:
            changes[key] = Path(changes[key])
    if "train_counts" in changes:
        changes["train_counts"] = tuple(changes["train_counts"])
    if "splits" in changes:
        changes["splits"] = tuple(changes["splits"])
    return replace(config, **changes)
