"""Stage-1 and stage-2 QNN-vs-CNN comparison protocols."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, InputError
from ..imaging import Annotation, RegionGrid, class_weights, stitch_predictions
from ..nn import Dataset, EpochMetrics, Model, TrainConfig, predict, train
from ..quanv import QuanvStats, quanvolve_batch, stack_values
from .config import ExperimentConfig
from .data import Sample, generate_synthetic, ingest_dataset, make_stage2_sample

log = logging.getLogger(__name__)

MODELS = ("qnn", "cnn")
REFERENCE_ACCURACY = 0.978  # published stage-2 validation accuracy, logged as a reference line
ACCURACY_MARGIN = 0.02


@dataclass
class Setting:
    """One train/test partition, materialized for both front ends."""

    name: str
    train: dict[str, Dataset]
    test: dict[str, Dataset]
    test_ids: list[str]
    class_weights: tuple[float, ...] | None = None
    test_grids: list[RegionGrid] = field(default_factory=list)

    @property
    def train_count(self) -> int:
        return len(self.train["cnn"])

    @property
    def test_count(self) -> int:
        return len(self.test["cnn"])


@dataclass
class Prepared:
    settings: list[Setting]
    timings: dict[str, float]
    skipped: int = 0


@dataclass
class RunResult:
    model: str
    setting: str
    seed: int
    train_count: int
    test_count: int
    history: list[EpochMetrics]
    test_hash: str
    train_seconds: float = 0.0

    @property
    def name(self) -> str:
        return f"{self.model}-{self.setting}-seed{self.seed}"

    @property
    def final_test_acc(self) -> float:
        return self.history[-1].test_acc

    @property
    def final_test_loss(self) -> float:
        return self.history[-1].test_loss

    @property
    def val_loss_variance(self) -> float:
        """Variance of the epoch-to-epoch change in test loss."""
        losses = np.array([m.test_loss for m in self.history])
        return float(np.var(np.diff(losses))) if losses.size > 1 else 0.0


@dataclass
class Localization:
    source_id: str
    setting: str
    model: str
    annotation: Annotation
    region_accuracy: float


@dataclass
class ComparisonReport:
    stage: int
    runs: list[RunResult]
    timings: dict[str, float]
    localization: list[Localization] = field(default_factory=list)
    reference_accuracy: float | None = None

    @property
    def settings(self) -> list[str]:
        return list(dict.fromkeys(r.setting for r in self.runs))

    def select(self, model: str, setting: str) -> list[RunResult]:
        return [r for r in self.runs if r.model == model and r.setting == setting]

    def mean_accuracy(self, model: str, setting: str) -> float:
        return float(np.mean([r.final_test_acc for r in self.select(model, setting)]))

    def mean_variance(self, model: str, setting: str | None = None) -> float:
        runs = [r for r in self.runs if r.model == model and (setting is None or r.setting == setting)]
        return float(np.mean([r.val_loss_variance for r in runs]))

    def mean_curve(self, model: str, setting: str, key: str) -> np.ndarray:
        return np.mean([[getattr(m, key) for m in r.history] for r in self.select(model, setting)], axis=0)

    def claims(self) -> dict[str, bool]:
        """Qualitative stage-1 claims, evaluated on the smallest training set."""
        if self.stage != 1:
            return {}
        smallest = min(self.settings, key=lambda s: self.select("qnn", s)[0].train_count)
        return {
            "qnn_accuracy_at_least_cnn_minus_margin": self.mean_accuracy("qnn", smallest)
            >= self.mean_accuracy("cnn", smallest) - ACCURACY_MARGIN,
            "qnn_val_loss_variance_at_most_cnn": self.mean_variance("qnn") <= self.mean_variance("cnn"),
        }


# ---- data preparation ---------------------------------------------------


def _digest(ids, labels) -> str:
    h = hashlib.sha256()
    for i, y in zip(ids, labels):
        h.update(f"{i}\t{int(y)}\n".encode())
    return h.hexdigest()


def _center_crop(image: np.ndarray, size: int | None) -> np.ndarray:
    if size is None:
        return image
    h, w = image.shape
    if size > min(h, w):
        raise ConfigError(f"crop {size} larger than image {image.shape}")
    top, left = (h - size) // 2, (w - size) // 2
    return image[top : top + size, left : left + size]


def _quanvolve(images, ids, config: ExperimentConfig, timings: dict) -> np.ndarray:
    stats = QuanvStats()
    start = time.perf_counter()
    tensors = quanvolve_batch(images, config.quanv, config.resolved_cache_dir(), ids, stats)
    timings["quanvolution_seconds"] = timings.get("quanvolution_seconds", 0.0) + time.perf_counter() - start
    timings["circuit_seconds"] = timings.get("circuit_seconds", 0.0) + stats.circuit_seconds
    timings["cache_hits"] = timings.get("cache_hits", 0) + stats.cache_hits
    timings["cache_misses"] = timings.get("cache_misses", 0) + stats.cache_misses
    return stack_values(tensors)


def _standardize(train_x: np.ndarray, *others: np.ndarray):
    """Per-channel z-scoring with statistics from the training inputs only."""
    mean = train_x.mean(axis=(0, 1, 2))
    std = train_x.std(axis=(0, 1, 2))
    std = np.where(std > 0, std, 1.0)
    return [(x - mean) / std for x in (train_x, *others)]


def _stage1_samples(config: ExperimentConfig) -> tuple[list[Sample], list[Sample], int]:
    n_train = max(config.train_counts)
    if config.dataset is None:
        samples = generate_synthetic(config.synthetic, n_train + config.test_count)
        return samples[:n_train], samples[n_train:], 0
    corpus = ingest_dataset(config.dataset, 1)
    if len(corpus) < n_train + config.test_count:
        raise InputError(
            f"corpus has {len(corpus)} images, need {n_train} train + {config.test_count} test"
        )
    order = np.random.default_rng(config.synthetic.seed).permutation(len(corpus))
    shuffled = [corpus[int(i)] for i in order]
    return shuffled[:n_train], shuffled[len(corpus) - config.test_count :], len(corpus.skipped)


def prepare_stage1(config: ExperimentConfig) -> Prepared:
    if config.stage != 1:
        raise ConfigError("prepare_stage1 needs a stage-1 config")
    timings: dict[str, float] = {}
    train_pool, test_pool, skipped = _stage1_samples(config)
    shapes = {s.image.shape for s in train_pool + test_pool}
    if shapes != {config.cnn_input[:2]}:
        raise InputError(f"stage-1 images must all be {config.cnn_input[:2]}, found {sorted(shapes)}")
    both = train_pool + test_pool
    quantum = _quanvolve([_center_crop(s.image, config.crop) for s in both], [s.source_id for s in both], config, timings)
    classical = np.stack([s.image for s in both])[..., None]
    labels = np.array([s.label for s in both], dtype=np.int64)
    n_pool = len(train_pool)
    test_ids = [s.source_id for s in test_pool]
    settings = []
    for count in config.train_counts:
        y_tr, y_te = labels[:count], labels[n_pool:]
        q_tr, q_te = quantum[:count], quantum[n_pool:]
        if config.standardize_quantum:
            q_tr, q_te = _standardize(q_tr, q_te)
        cw = tuple(class_weights(y_tr)) if config.class_weighting else None
        settings.append(
            Setting(
                f"n{count}",
                {"qnn": Dataset(q_tr, y_tr), "cnn": Dataset(classical[:count], y_tr)},
                {"qnn": Dataset(q_te, y_te), "cnn": Dataset(classical[n_pool:], y_te)},
                test_ids,
                cw,
            )
        )
    return Prepared(settings, timings, skipped)


def _stage2_samples(config: ExperimentConfig) -> tuple[list[Sample], int]:
    if config.dataset is not None:
        corpus = ingest_dataset(config.dataset, 2, config.categories, config.positive_threshold)
        return corpus.samples, len(corpus.skipped)
    side = config.cnn_input[0] * 9
    samples = []
    for k, (h, w) in enumerate(config.resolutions):
        # crack width scales with resolution so it survives rescaling to the target grid
        spec = replace(
            config.synthetic,
            image_size=(h, w),
            crack_width_px=config.synthetic.crack_width_px * max(h, w) / side,
        )
        n = config.images_per_resolution
        for s in generate_synthetic(spec, n, start=k * n):
            samples.append(make_stage2_sample(s.image, s.mask, s.source_id, config.categories, config.positive_threshold))
    return samples, 0


def _train_fraction_count(fraction: float, n: int) -> int:
    count = int(round(fraction * n))
    if not 0 < count < n:
        raise ConfigError(f"split {fraction} of {n} images leaves an empty train or test set")
    return count


def prepare_stage2(config: ExperimentConfig) -> Prepared:
    if config.stage != 2:
        raise ConfigError("prepare_stage2 needs a stage-2 config")
    timings: dict[str, float] = {}
    samples, skipped = _stage2_samples(config)
    side = config.cnn_input[0]
    for s in samples:
        if s.grid.regions[0].pixels.shape != (side, side):
            raise InputError(
                f"{s.source_id}: regions are {s.grid.regions[0].pixels.shape}, expected {(side, side)}; "
                "check the category table"
            )
    region_ids = [f"{s.source_id}-r{r.row}c{r.col}" for s in samples for r in s.grid.regions]
    regions = np.concatenate([s.grid.model_inputs() for s in samples])
    quantum = _quanvolve(list(regions), region_ids, config, timings).reshape(len(samples), 81, *config.qnn_input)
    classical = regions.reshape(len(samples), 81, side, side, 1)
    labels = np.stack([s.grid.labels for s in samples])
    weights = np.array([[r.weight for r in s.grid.regions] for s in samples])
    order = np.random.default_rng(config.synthetic.seed).permutation(len(samples))
    settings = []
    for fraction in config.splits:
        n_train = _train_fraction_count(fraction, len(samples))
        tr, te = np.sort(order[:n_train]), np.sort(order[n_train:])

        def flat(a, idx):
            return a[idx].reshape(-1, *a.shape[2:])

        y_tr, y_te = flat(labels, tr), flat(labels, te)
        q_tr, q_te = flat(quantum, tr), flat(quantum, te)
        if config.standardize_quantum:
            q_tr, q_te = _standardize(q_tr, q_te)
        cw = tuple(class_weights(y_tr)) if config.class_weighting else None
        sw_tr, sw_te = flat(weights, tr), flat(weights, te)
        pct = int(round(fraction * 100))
        settings.append(
            Setting(
                f"split{pct}-{100 - pct}",
                {"qnn": Dataset(q_tr, y_tr, sw_tr), "cnn": Dataset(flat(classical, tr), y_tr, sw_tr)},
                {"qnn": Dataset(q_te, y_te, sw_te), "cnn": Dataset(flat(classical, te), y_te, sw_te)},
                [region_ids[i * 81 + j] for i in te for j in range(81)],
                cw,
                [samples[i].grid for i in te],
            )
        )
    return Prepared(settings, timings, skipped)


def prepare(config: ExperimentConfig) -> Prepared:
    return prepare_stage1(config) if config.stage == 1 else prepare_stage2(config)


# ---- protocol -----------------------------------------------------------


def train_config(config: ExperimentConfig, seed: int, setting: Setting) -> TrainConfig:
    return replace(config.train, seed=seed, class_weights=setting.class_weights)


def train_one(config: ExperimentConfig, setting: Setting, model: str, seed: int):
    specs = dict(zip(MODELS, config.model_specs(seed)))
    start = time.perf_counter()
    result = train(specs[model], setting.train[model], train_config(config, seed, setting), setting.test[model])
    elapsed = time.perf_counter() - start
    test = setting.test[model]
    run = RunResult(
        model, setting.name, seed, setting.train_count, setting.test_count, result.history,
        _digest(setting.test_ids, test.y), elapsed,
    )
    log.info("%s: final test accuracy %.4f (%.1fs)", run.name, run.final_test_acc, elapsed)
    return run, result.model


def _localize(setting: Setting, model_name: str, model: Model) -> list[Localization]:
    test = setting.test[model_name]
    probs = predict(model, test.x).reshape(len(setting.test_grids), 81, -1)
    out = []
    for grid, p in zip(setting.test_grids, probs):
        pred = p.argmax(axis=1)
        annotation = stitch_predictions(grid, pred, p.max(axis=1))
        accuracy = float(np.mean(pred == grid.labels))
        out.append(Localization(grid.source_id, setting.name, model_name, annotation, accuracy))
    return out


def _run(config: ExperimentConfig, prepared: Prepared) -> ComparisonReport:
    runs, localization = [], []
    for setting in prepared.settings:
        for seed in config.seeds:
            for model in MODELS:
                run, trained = train_one(config, setting, model, seed)
                runs.append(run)
                if config.stage == 2 and seed == config.seeds[0]:
                    localization.extend(_localize(setting, model, trained))
    timings = dict(prepared.timings)
    timings["training_seconds"] = float(sum(r.train_seconds for r in runs))
    timings["skipped_images"] = prepared.skipped
    reference = REFERENCE_ACCURACY if config.stage == 2 else None
    return ComparisonReport(config.stage, runs, timings, localization, reference)


def run_stage1(config: ExperimentConfig) -> ComparisonReport:
    """QNN vs CNN at every training count, against one shared test set."""
    return _run(config, prepare_stage1(config))


def run_stage2(config: ExperimentConfig) -> ComparisonReport:
    """QNN vs CNN on 9 x 9 region grids at every image-level split, with localization."""
    return _run(config, prepare_stage2(config))
