"""Sequential model: spec, parameter allocation, forward/backward, checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, InputError, NumericError, StructuralError
from . import layers as L
from .layers import LAYER_TYPES, Conv2D, Dense, Dropout, Flatten, MaxPool2D, Softmax

PROB_FLOOR = 1e-12
N_CLASSES = 2
CHECKPOINT_MAGIC = b"QNNM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple[int, ...]
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        shapes = self.shapes()
        if shapes[-1] != (N_CLASSES,):
            raise StructuralError(f"final layer width must be {N_CLASSES}, got {shapes[-1]}")

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shape after each layer, starting with the input."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "rng_seed": self.rng_seed,
            "layers": [{"type": type(l).__name__, **asdict(l)} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        layers = []
        for entry in data["layers"]:
            entry = dict(entry)
            kind = entry.pop("type")
            if kind not in LAYER_TYPES:
                raise FormatError(f"unknown layer type {kind!r}")
            layers.append(LAYER_TYPES[kind](**entry))
        return cls(tuple(layers), tuple(data["input_shape"]), int(data["rng_seed"]))


@dataclass
class LayerCount:
    name: str
    output_shape: tuple[int, ...]
    parameters: int


@dataclass
class ParameterCount:
    layers: list[LayerCount]

    @property
    def total(self) -> int:
        return sum(l.parameters for l in self.layers)

    def flatten_width(self) -> int | None:
        for l in self.layers:
            if l.name.startswith("flatten"):
                return l.output_shape[0]
        return None

    def table(self) -> str:
        lines = [f"{'layer':<16}{'output shape':<20}{'params':>10}"]
        for l in self.layers:
            lines.append(f"{l.name:<16}{str(l.output_shape):<20}{l.parameters:>10}")
        lines.append(f"{'total':<36}{self.total:>10}")
        return "\n".join(lines)


def count_parameters(spec: ModelSpec) -> ParameterCount:
    """Analytic counts: Conv2D filters*(k*k*c_in + 1), Dense units*(n_in + 1)."""
    shapes = spec.shapes()
    seen: dict[str, int] = {}
    out = []
    for layer, shape_in, shape_out in zip(spec.layers, shapes[:-1], shapes[1:]):
        kind = type(layer).__name__.lower()
        name = f"{kind}_{seen.get(kind, 0)}"
        seen[kind] = seen.get(kind, 0) + 1
        if isinstance(layer, Conv2D):
            n = layer.filters * (layer.kernel * layer.kernel * shape_in[2] + 1)
        elif isinstance(layer, Dense):
            n = layer.units * (shape_in[0] + 1)
        else:
            n = 0
        out.append(LayerCount(name, shape_out, n))
    return ParameterCount(out)


@dataclass
class Model:
    """A spec plus its parameters; ``params[i]`` holds layer i's arrays."""

    spec: ModelSpec
    params: list[dict[str, np.ndarray]]
    optimizer_state: dict = field(default_factory=dict)

    @classmethod
    def init(cls, spec: ModelSpec) -> "Model":
        """He-uniform weights, zero biases, drawn from ``spec.rng_seed``."""
        rng = np.random.default_rng(spec.rng_seed)
        params = []
        for layer, shape in zip(spec.layers, spec.shapes()):
            arrays = {}
            for name, pshape in layer.parameter_shapes(shape).items():
                if name == "W":
                    limit = np.sqrt(6.0 / layer.fan_in(shape))
                    arrays[name] = rng.uniform(-limit, limit, size=pshape)
                else:
                    arrays[name] = np.zeros(pshape)
            params.append(arrays)
        return cls(spec, params)

    def parameter_arrays(self) -> list[np.ndarray]:
        return [arr for p in self.params for _, arr in sorted(p.items())]

    def n_parameters(self) -> int:
        return sum(a.size for a in self.parameter_arrays())


def _check_finite(values, layer_index, layer):
    if not np.isfinite(values).all():
        raise NumericError(f"non-finite activation after layer {layer_index} ({type(layer).__name__})")


def _forward(model: Model, batch, training: bool, rng):
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != model.spec.input_shape:
        raise StructuralError(f"batch shape {x.shape[1:]} != model input {model.spec.input_shape}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite values in input batch")
    caches = []
    for i, (layer, p) in enumerate(zip(model.spec.layers, model.params)):
        if isinstance(layer, Conv2D):
            z, cache = L.conv2d_forward(x, p["W"], p["b"], layer.stride, layer.padding)
            x = L.relu_forward(z) if layer.activation == "relu" else z
            caches.append((cache, z))
        elif isinstance(layer, Dense):
            z, cache = L.dense_forward(x, p["W"], p["b"])
            x = L.relu_forward(z) if layer.activation == "relu" else z
            caches.append((cache, z))
        elif isinstance(layer, MaxPool2D):
            x, cache = L.maxpool_forward(x, layer.size)
            caches.append(cache)
        elif isinstance(layer, Flatten):
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Dropout):
            if training and layer.rate > 0:
                if rng is None:
                    raise InputError("training-mode dropout needs an rng")
                mask = L.dropout_mask(x.shape, layer.rate, rng)
                x = x * mask
                caches.append(mask)
            else:
                caches.append(None)
        elif isinstance(layer, Softmax):
            x = L.softmax_forward(x)
            caches.append(x)
        _check_finite(x, i, layer)
    return x, caches


def forward(model: Model, batch, training: bool = False, rng=None) -> np.ndarray:
    """Class probabilities, shape (batch, 2)."""
    return _forward(model, batch, training, rng)[0]


def _check_labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise StructuralError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise InputError(f"labels must be integer class ids in 0..{N_CLASSES - 1}")
    return labels.astype(np.int64)


def _example_weights(labels, class_weights, sample_weights):
    w = np.ones(labels.shape[0])
    if class_weights is not None:
        w = w * np.asarray(class_weights, dtype=np.float64)[labels]
    if sample_weights is not None:
        w = w * np.asarray(sample_weights, dtype=np.float64)
    return w


def loss(probs, labels, class_weights=None, sample_weights=None) -> float:
    """Weighted sparse categorical cross-entropy, mean over the batch."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_labels(labels, probs.shape[0])
    w = _example_weights(labels, class_weights, sample_weights)
    p = np.maximum(probs[np.arange(labels.size), labels], PROB_FLOOR)
    return float(np.mean(-w * np.log(p)))


def backward(model: Model, batch, labels, class_weights=None, sample_weights=None, rng=None, training=True):
    """Loss and exact gradients, aligned with ``model.params``.

    Dropout masks are drawn from ``rng``, so two calls with equally seeded
    generators see the same masks.
    """
    probs, caches = _forward(model, batch, training, rng)
    labels = _check_labels(labels, probs.shape[0])
    w = _example_weights(labels, class_weights, sample_weights)
    n = labels.size
    rows = np.arange(n)
    p_true = probs[rows, labels]
    value = float(np.mean(-w * np.log(np.maximum(p_true, PROB_FLOOR))))

    g = np.zeros_like(probs)
    live = p_true > PROB_FLOOR
    g[rows[live], labels[live]] = -w[live] / (n * p_true[live])

    grads: list[dict[str, np.ndarray]] = [dict() for _ in model.params]
    for i in range(len(model.spec.layers) - 1, -1, -1):
        layer, cache, p = model.spec.layers[i], caches[i], model.params[i]
        if isinstance(layer, Softmax):
            g = L.softmax_backward(g, cache)
        elif isinstance(layer, Dropout):
            if cache is not None:
                g = g * cache
        elif isinstance(layer, Flatten):
            g = g.reshape(cache)
        elif isinstance(layer, MaxPool2D):
            g = L.maxpool_backward(g, cache)
        elif isinstance(layer, Dense):
            x_in, z = cache
            if layer.activation == "relu":
                g = L.relu_backward(g, z)
            g, grads[i]["W"], grads[i]["b"] = L.dense_backward(g, x_in, p["W"])
        elif isinstance(layer, Conv2D):
            conv_cache, z = cache
            if layer.activation == "relu":
                g = L.relu_backward(g, z)
            g, grads[i]["W"], grads[i]["b"] = L.conv2d_backward(g, conv_cache)
    return value, grads


def predict(model: Model, x, chunk: int = 128) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros((0, N_CLASSES))
    return np.concatenate([forward(model, x[i : i + chunk]) for i in range(0, x.shape[0], chunk)])


# ---- checkpoints ---------------------------------------------------------


def save_model(model: Model, path) -> None:
    """Binary checkpoint: magic, version, spec JSON, then float64 LE arrays."""
    spec_json = json.dumps(model.spec.to_dict(), sort_keys=True).encode()
    arrays = model.parameter_arrays()
    parts = [
        struct.pack("<4sHI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(spec_json)),
        spec_json,
        struct.pack("<I", len(arrays)),
    ]
    for arr in arrays:
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> Model:
    raw = Path(path).read_bytes()
    try:
        magic, version, n_json = struct.unpack_from("<4sHI", raw)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a model checkpoint")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        offset = struct.calcsize("<4sHI")
        spec = ModelSpec.from_dict(json.loads(raw[offset : offset + n_json]))
        offset += n_json
        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", raw, offset)
            shape = struct.unpack_from(f"<{ndim}I", raw, offset + 4)
            offset += 4 + 4 * ndim
            size = int(np.prod(shape)) * 8
            if offset + size > len(raw):
                raise FormatError(f"{path}: truncated parameter data")
            arrays.append(np.frombuffer(raw, "<f8", int(np.prod(shape)), offset).reshape(shape).astype(np.float64))
            offset += size
    except (struct.error, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint: {exc}") from exc
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    model = Model.init(spec)
    slots = [(p, name) for p in model.params for name in sorted(p)]
    if len(slots) != len(arrays):
        raise FormatError(f"{path}: expected {len(slots)} arrays, found {len(arrays)}")
    for (p, name), arr in zip(slots, arrays):
        if p[name].shape != arr.shape:
            raise FormatError(f"{path}: array shape {arr.shape} != expected {p[name].shape}")
        p[name] = arr
    return model


def stage_architectures(
    cnn_input: tuple[int, int, int],
    qnn_input: tuple[int, int, int],
    filters: int = 32,
    kernel: int = 4,
    extra_filters: int = 16,
    dense_units: int = 32,
    dropout: float = 0.0,
    seed: int = 0,
) -> tuple[ModelSpec, ModelSpec]:
    """Matched (qnn, cnn) stacks sharing the classifier head.

    The CNN carries one extra Conv2D + MaxPool2D block standing in for the
    quanvolution front end.
    """
    head = (Flatten(), Dense(dense_units, "relu"), Dropout(dropout), Dense(N_CLASSES), Softmax())
    front = (Conv2D(filters, kernel, padding="same"), MaxPool2D(2))
    qnn = ModelSpec(front + head, qnn_input, seed)
    cnn = ModelSpec(front + (Conv2D(extra_filters, kernel, padding="same"), MaxPool2D(2)) + head, cnn_input, seed)
    return qnn, cnn
