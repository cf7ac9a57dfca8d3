"""Layer descriptions and their forward/backward kernels.

Tensors are NHWC float64.  Each layer spec is a frozen dataclass; the
kernels are plain functions returning ``(output, cache)`` on the way
forward and input/parameter gradients on the way back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, StructuralError

ACTIVATIONS = (None, "relu")


def _check_activation(activation):
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unsupported activation {activation!r}")


@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: int
    stride: int = 1
    padding: str = "valid"
    activation: str | None = "relu"

    def __post_init__(self):
        if self.padding not in ("valid", "same"):
            raise ConfigError(f"padding must be 'valid' or 'same', got {self.padding!r}")
        if min(self.filters, self.kernel, self.stride) < 1:
            raise ConfigError("filters, kernel and stride must be positive")
        _check_activation(self.activation)

    def output_shape(self, shape):
        h, w, _ = shape
        if self.padding == "same":
            return (-(-h // self.stride), -(-w // self.stride), self.filters)
        if h < self.kernel or w < self.kernel:
            raise StructuralError(f"Conv2D kernel {self.kernel} larger than input {shape}")
        return ((h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1, self.filters)

    def parameter_shapes(self, shape):
        return {"W": (self.kernel, self.kernel, shape[2], self.filters), "b": (self.filters,)}

    def fan_in(self, shape):
        return self.kernel * self.kernel * shape[2]


@dataclass(frozen=True)
class MaxPool2D:
    size: int = 2

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError("pool size must be positive")

    def output_shape(self, shape):
        h, w, c = shape
        if h < self.size or w < self.size:
            raise StructuralError(f"MaxPool2D size {self.size} larger than input {shape}")
        return (h // self.size, w // self.size, c)

    def parameter_shapes(self, shape):
        return {}


@dataclass(frozen=True)
class Flatten:
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def parameter_shapes(self, shape):
        return {}


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str | None = None

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError("Dense units must be positive")
        _check_activation(self.activation)

    def output_shape(self, shape):
        if len(shape) != 1:
            raise StructuralError(f"Dense expects a flat input, got shape {shape}")
        return (self.units,)

    def parameter_shapes(self, shape):
        return {"W": (shape[0], self.units), "b": (self.units,)}

    def fan_in(self, shape):
        return shape[0]


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.0

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")

    def output_shape(self, shape):
        return shape

    def parameter_shapes(self, shape):
        return {}


@dataclass(frozen=True)
class Softmax:
    def output_shape(self, shape):
        return shape

    def parameter_shapes(self, shape):
        return {}


LAYER_TYPES = {cls.__name__: cls for cls in (Conv2D, MaxPool2D, Flatten, Dense, Dropout, Softmax)}


# ---- kernels -----------------------------------------------------------


def _same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d_forward(x, W, b, stride=1, padding="valid"):
    k, _, c, f = W.shape
    if padding == "same":
        ph = _same_padding(x.shape[1], k, stride)
        pw = _same_padding(x.shape[2], k, stride)
        x = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    else:
        ph = pw = (0, 0)
    n, hp, wp, _ = x.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if k * k * c <= 4 * f:
        # few input taps: one im2col matmul is cheapest
        windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
        out = cols @ W.reshape(-1, f) + b
    else:
        # many input taps: accumulate k*k shifted matmuls, never materializing im2col
        cols = None
        out = np.empty((n * ho * wo, f))
        out[...] = b
        for i in range(k):
            for j in range(k):
                window = x[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
                out += window.reshape(-1, c) @ W[i, j]
    return out.reshape(n, ho, wo, f), (x, cols, ph, pw, stride, W)


def conv2d_backward(dout, cache):
    x, cols, ph, pw, stride, W = cache
    n, ho, wo, f = dout.shape
    k, c = W.shape[0], W.shape[2]
    d2 = dout.reshape(-1, f)
    dx = np.zeros(x.shape)
    if cols is not None:
        dW = (cols.T @ d2).reshape(W.shape)
        dcols = (d2 @ W.reshape(-1, f).T).reshape(n, ho, wo, k, k, c)
        for i in range(k):
            for j in range(k):
                dx[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
    else:
        dW = np.empty_like(W)
        for i in range(k):
            for j in range(k):
                window = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                dW[i, j] = x[window].reshape(-1, c).T @ d2
                dx[window] += (d2 @ W[i, j].T).reshape(n, ho, wo, c)
    db = d2.sum(axis=0)
    h_end = x.shape[1] - ph[1]
    w_end = x.shape[2] - pw[1]
    return dx[:, ph[0] : h_end, pw[0] : w_end, :], dW, db


def _pool_views(x, size, ho, wo):
    return [x[:, i : ho * size : size, j : wo * size : size, :] for i in range(size) for j in range(size)]


def maxpool_forward(x, size):
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    views = _pool_views(x, size, ho, wo)
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    return out, (x, out, size)


def maxpool_backward(dout, cache):
    """Route each gradient to the first maximal element of its window."""
    x, out, size = cache
    ho, wo = out.shape[1:3]
    dx = np.zeros(x.shape)
    taken = np.zeros(out.shape, dtype=bool)
    for (i, j), v in zip(np.ndindex(size, size), _pool_views(x, size, ho, wo)):
        hit = (v == out) & ~taken
        taken |= hit
        dx[:, i : ho * size : size, j : wo * size : size, :] = np.where(hit, dout, 0.0)
    return dx


def dense_forward(x, W, b):
    return x @ W + b, x


def dense_backward(dout, x, W):
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(z):
    return np.maximum(z, 0.0)


def relu_backward(dout, z):
    return dout * (z > 0)


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask: kept units scaled by 1 / (1 - rate)."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def softmax_forward(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dout, p):
    return p * (dout - (dout * p).sum(axis=1, keepdims=True))
