from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, Softmax
from .model import (
    Model,
    ModelSpec,
    backward,
    count_parameters,
    forward,
    load_model,
    loss,
    predict,
    save_model,
    stage_architectures,
)
from .optim import Adam, adam_step
from .train import Dataset, EpochMetrics, TrainConfig, TrainResult, evaluate, read_metrics, train, write_metrics

TrainedModel = Model

__all__ = [
    "Adam",
    "Conv2D",
    "Dataset",
    "Dense",
    "Dropout",
    "EpochMetrics",
    "Flatten",
    "MaxPool2D",
    "Model",
    "ModelSpec",
    "Softmax",
    "TrainConfig",
    "TrainResult",
    "TrainedModel",
    "adam_step",
    "backward",
    "count_parameters",
    "evaluate",
    "forward",
    "load_model",
    "loss",
    "predict",
    "read_metrics",
    "save_model",
    "stage_architectures",
    "train",
    "write_metrics",
]
