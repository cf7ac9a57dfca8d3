"""Mini-batch training loop with per-epoch metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, InputError
from .model import Model, ModelSpec, backward, loss, predict
from .optim import Adam, adam_step

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "train_loss", "train_acc", "test_loss", "test_acc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    class_weights: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        b1, b2 = self.adam_betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ConfigError(f"adam_betas must lie in (0, 1), got {self.adam_betas}")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    sample_weights: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise InputError(f"{self.x.shape[0]} inputs but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochMetrics] = field(default_factory=list)


def evaluate(model: Model, data: Dataset) -> tuple[float, float]:
    """Unweighted loss and accuracy in inference mode."""
    if len(data) == 0:
        return float("nan"), float("nan")
    probs = predict(model, data.x)
    acc = float(np.mean(probs.argmax(axis=1) == data.y))
    return loss(probs, data.y), acc


def train(spec: ModelSpec, data: Dataset, config: TrainConfig, test: Dataset | None = None) -> TrainResult:
    """Train from scratch; every random draw derives from ``config.seed`` and ``spec.rng_seed``."""
    if len(data) == 0:
        raise InputError("training set is empty")
    if config.class_weights is not None and len(np.unique(data.y)) < len(config.class_weights):
        raise InputError("class weighting needs at least one example of every class")
    model = Model.init(spec)
    optimizer = Adam(config.learning_rate, *config.adam_betas, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    test = test if test is not None else Dataset(data.x[:0], data.y[:0])
    result = TrainResult(model)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            idx = order[start : start + config.batch_size]
            sw = data.sample_weights[idx] if data.sample_weights is not None else None
            _, grads = backward(model, data.x[idx], data.y[idx], config.class_weights, sw, rng=rng)
            adam_step(model, grads, optimizer)
        train_loss, train_acc = evaluate(model, data)
        test_loss, test_acc = evaluate(model, test)
        result.history.append(EpochMetrics(epoch, train_loss, train_acc, test_loss, test_acc))
        log.debug("epoch %d: train %.4f/%.3f test %.4f/%.3f", epoch, train_loss, train_acc, test_loss, test_acc)
    return result


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics(history, path) -> None:
    lines = [",".join(METRIC_FIELDS)]
    for m in history:
        lines.append(
            f"{m.epoch},{_fmt(m.train_loss)},{_fmt(m.train_acc)},{_fmt(m.test_loss)},{_fmt(m.test_acc)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics(path) -> list[EpochMetrics]:
    rows = Path(path).read_text().splitlines()
    if not rows or tuple(rows[0].split(",")) != METRIC_FIELDS:
        raise InputError(f"{path}: not a metrics file")
    out = []
    for row in rows[1:]:
        e, *vals = row.split(",")
        out.append(EpochMetrics(int(e), *(float(v) for v in vals)))
    return out
