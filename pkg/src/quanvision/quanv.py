"""Quanvolution: scan non-overlapping patches through one fixed random circuit.

Every ``patch_size`` x ``patch_size`` patch is flattened row-major, pixel
``p_i`` becomes the encoding angle ``pi * p_i`` on qubit ``i``, and the
per-qubit <Z> values fill the channels of one output pixel.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheError, ConfigError, FormatError, InputError, StructuralError
from .qsim import MAX_QUBITS, CircuitSpec, run_circuit_batch

log = logging.getLogger(__name__)

MAGIC = b"QTNS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIII32s")
STANDARD_QUBIT_COUNTS = (4, 16)
LUMINANCE = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class QuanvConfig:
    patch_size: int = 2
    stride: int | None = None
    n_random_layers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.patch_size)
        if self.patch_size < 1:
            raise ConfigError(f"patch_size must be positive, got {self.patch_size}")
        if self.stride <= 0:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if self.n_qubits > MAX_QUBITS:
            raise ConfigError(f"patch_size {self.patch_size} needs {self.n_qubits} qubits (max {MAX_QUBITS})")
        if self.n_random_layers < 0:
            raise ConfigError("n_random_layers must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def n_qubits(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def is_standard(self) -> bool:
        return self.n_qubits in STANDARD_QUBIT_COUNTS and self.stride == self.patch_size

    def serialize(self) -> bytes:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":")).encode()

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.serialize()).digest()

    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return (
            (height - self.patch_size) // self.stride + 1,
            (width - self.patch_size) // self.stride + 1,
            self.n_qubits,
        )

    def circuit(self) -> CircuitSpec:
        return _circuit(self.n_qubits, self.n_random_layers, self.seed)


@lru_cache(maxsize=8)
def _circuit(n_qubits: int, n_layers: int, seed: int) -> CircuitSpec:
    return CircuitSpec.random(n_qubits, n_layers, seed)


@dataclass(eq=False)
class QuantumTensor:
    values: np.ndarray
    config_fingerprint: bytes
    source_id: str = ""

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def equals(self, other: "QuantumTensor") -> bool:
        return (
            self.config_fingerprint == other.config_fingerprint
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


@dataclass
class QuanvStats:
    """Counters updated by quanvolution calls when passed in."""

    circuit_executions: int = 0
    circuit_seconds: float = 0.0
    cache_hits: int = 0
    cache_misses: int = 0
    per_image_seconds: list[float] = field(default_factory=list)


def to_grayscale(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] in (3, 4):
        return image[..., :3] @ LUMINANCE
    if image.ndim == 3 and image.shape[2] == 1:
        return image[..., 0]
    if image.ndim != 2:
        raise InputError(f"expected a 2-D grayscale or RGB image, got shape {image.shape}")
    return image


def normalize_unit(image) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant image maps to zeros."""
    image = to_grayscale(image)
    lo, hi = float(image.min()), float(image.max())
    if hi - lo <= 0:
        return np.zeros_like(image)
    return (image - lo) / (hi - lo)


def extract_patches(image: np.ndarray, patch_size: int, stride: int) -> np.ndarray:
    """(H', W', patch_size**2) array of row-major flattened patches."""
    windows = sliding_window_view(image, (patch_size, patch_size))[::stride, ::stride]
    return windows.reshape(windows.shape[0], windows.shape[1], patch_size * patch_size)


def _validated(image, config: QuanvConfig) -> np.ndarray:
    image = to_grayscale(image)
    if image.shape[0] < config.patch_size or image.shape[1] < config.patch_size:
        raise InputError(f"image {image.shape} smaller than patch {config.patch_size}")
    if not np.isfinite(image).all():
        raise InputError("image contains non-finite values")
    if image.min() < -1e-9 or image.max() > 1 + 1e-9:
        raise InputError(
            f"pixel values must lie in [0, 1], got [{image.min():.6g}, {image.max():.6g}]"
        )
    return np.clip(image, 0.0, 1.0)


def quanvolve_image(
    image, config: QuanvConfig, source_id: str = "", stats: QuanvStats | None = None
) -> QuantumTensor:
    image = _validated(image, config)
    if not config.is_standard:
        log.debug("nonstandard quanvolution config: %s", config)
    patches = extract_patches(image, config.patch_size, config.stride)
    h, w, n = patches.shape
    start = time.perf_counter()
    expectations = run_circuit_batch(config.circuit(), np.pi * patches.reshape(h * w, n))
    elapsed = time.perf_counter() - start
    if stats is not None:
        stats.circuit_executions += h * w
        stats.circuit_seconds += elapsed
        stats.per_image_seconds.append(elapsed)
    values = expectations.reshape(h, w, n)
    return QuantumTensor(values, config.fingerprint(), source_id)


def serialize_tensor(tensor: QuantumTensor, path) -> None:
    path = Path(path)
    if len(tensor.config_fingerprint) != 32:
        raise StructuralError("config fingerprint must be 32 bytes")
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, tensor.height, tensor.width, tensor.channels, tensor.config_fingerprint
    )
    payload = np.ascontiguousarray(tensor.values, dtype="<f8").tobytes()
    path.write_bytes(header + payload)


def deserialize_tensor(path, source_id: str | None = None) -> QuantumTensor:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, h, w, c, fingerprint = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + 8 * h * w * c
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(h, w, c)
    return QuantumTensor(
        values.astype(np.float64), fingerprint, path.stem if source_id is None else source_id
    )


def cache_key(image: np.ndarray, config: QuanvConfig) -> str:
    digest = hashlib.sha256(config.serialize())
    digest.update(struct.pack("<II", *image.shape))
    digest.update(np.ascontiguousarray(image, dtype="<f8").tobytes())
    return digest.hexdigest()


def _atomic_write(tensor: QuantumTensor, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        serialize_tensor(tensor, tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _load_cached(path: Path, config: QuanvConfig, shape, source_id: str) -> QuantumTensor:
    tensor = deserialize_tensor(path, source_id)
    if tensor.config_fingerprint != config.fingerprint():
        raise CacheError(f"{path}: config fingerprint mismatch")
    if tensor.values.shape != shape:
        raise CacheError(f"{path}: shape {tensor.values.shape} != expected {shape}")
    return tensor


def quanvolve_batch(
    images,
    config: QuanvConfig,
    cache_dir=None,
    source_ids=None,
    stats: QuanvStats | None = None,
) -> list[QuantumTensor]:
    """Quanvolve many images, reusing tensors persisted under ``cache_dir``.

    Cache files are keyed by SHA-256 of the config serialization and the
    image bytes, so a hit is bit-identical to a recompute.  Stale or
    corrupt entries are recomputed and overwritten.
    """
    stats = stats if stats is not None else QuanvStats()
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    out = []
    for i, image in enumerate(images):
        image = _validated(image, config)
        source_id = source_ids[i] if source_ids is not None else f"image-{i}"
        if cache is None:
            out.append(quanvolve_image(image, config, source_id, stats))
            continue
        path = cache / f"{cache_key(image, config)}.qtns"
        if path.exists():
            try:
                out.append(_load_cached(path, config, config.output_shape(*image.shape), source_id))
                stats.cache_hits += 1
                continue
            except FormatError as exc:
                log.warning("recomputing %s: %s", source_id, exc)
        stats.cache_misses += 1
        tensor = quanvolve_image(image, config, source_id, stats)
        _atomic_write(tensor, path)
        out.append(tensor)
    return out


def stack_values(tensors) -> np.ndarray:
    """(N, H', W', C) array from a list of tensors of equal shape."""
    shapes = {t.values.shape for t in tensors}
    if len(shapes) != 1:
        raise StructuralError(f"tensors have differing shapes: {sorted(shapes)}")
    return np.stack([t.values for t in tensors])
