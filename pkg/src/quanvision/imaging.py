"""Region grids for crack localization.

An image is padded (edge replication) so both sides are multiples of 9,
optionally rescaled to its resolution category's target size, and cut
into 9 x 9 = 81 equal regions.  Masks give each region a binary label;
predictions are stitched back onto the original image.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, InputError, StructuralError

log = logging.getLogger(__name__)

GRID = 9
N_REGIONS = GRID * GRID
CATEGORY_FIELDS = ("height", "width", "target", "weight")
SIDECAR_FIELDS = ("row", "col", "label", "confidence")


@dataclass(frozen=True)
class ResolutionCategory:
    height: int
    width: int
    target: int
    weight: float

    def __post_init__(self):
        if self.target <= 0 or self.target % GRID:
            raise ConfigError(f"category target {self.target} is not a positive multiple of {GRID}")
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("category height/width must be positive")
        if not self.weight > 0:
            raise ConfigError(f"category weight must be positive, got {self.weight}")

    @property
    def name(self) -> str:
        return f"{self.height}x{self.width}"


@dataclass(frozen=True)
class CategoryTable:
    categories: tuple[ResolutionCategory, ...] = ()
    fallback: bool = True

    def lookup(self, height: int, width: int) -> ResolutionCategory | None:
        for cat in self.categories:
            if (cat.height, cat.width) == (height, width):
                return cat
        return None


def load_categories(path, fallback: bool = True) -> CategoryTable:
    """Read a ``height,width,target,weight`` CSV file."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CATEGORY_FIELDS:
                raise ConfigError(f"{path}: header must be {','.join(CATEGORY_FIELDS)}")
            rows = [
                ResolutionCategory(int(r["height"]), int(r["width"]), int(r["target"]), float(r["weight"]))
                for r in reader
            ]
    except OSError as exc:
        raise ConfigError(f"cannot read category table {path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed category row: {exc}") from exc
    return CategoryTable(tuple(rows), fallback)


def save_categories(table: CategoryTable, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CATEGORY_FIELDS)
        for c in table.categories:
            writer.writerow([c.height, c.width, c.target, repr(c.weight)])


@dataclass
class Region:
    row: int
    col: int
    pixels: np.ndarray  # model input, rescaled when the category demands it
    native: np.ndarray  # the untouched slice of the padded image
    weight: float
    label: int = 0
    positive_fraction: float = 0.0


@dataclass
class RegionGrid:
    source_id: str
    source_resolution: tuple[int, int]
    resolution_category: str
    pad: tuple[int, int, int, int]  # top, bottom, left, right
    region_size: tuple[int, int]  # native region size inside the padded image
    padded_shape: tuple[int, int]
    regions: list[Region] = field(default_factory=list)

    @property
    def weight(self) -> float:
        return self.regions[0].weight

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.regions], dtype=np.int64)

    def model_inputs(self) -> np.ndarray:
        return np.stack([r.pixels for r in self.regions])

    def reassemble(self) -> np.ndarray:
        """Padded image rebuilt from the native region slices."""
        rows = [
            np.concatenate([self.regions[r * GRID + c].native for c in range(GRID)], axis=1)
            for r in range(GRID)
        ]
        return np.concatenate(rows, axis=0)

    def crop(self, padded: np.ndarray) -> np.ndarray:
        top, _, left, _ = self.pad
        h, w = self.source_resolution
        return padded[top : top + h, left : left + w]


def _next_multiple(n: int, k: int = GRID) -> int:
    return int(math.ceil(n / k) * k)


def _symmetric(total: int) -> tuple[int, int]:
    before = total // 2
    return before, total - before


def _resize(region: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if region.shape == size:
        return region.copy()
    img = Image.fromarray(region.astype(np.float32), mode="F")
    return np.asarray(img.resize((size[1], size[0]), Image.Resampling.BOX), dtype=np.float64)


def _geometry(h: int, w: int, table: CategoryTable | None):
    """(padded shape, model region size, weight, category name)."""
    cat = table.lookup(h, w) if table is not None else None
    if cat is None:
        if table is not None and not table.fallback:
            raise InputError(f"resolution {h}x{w} matches no category and fallback is disabled")
        if table is not None and table.categories:
            log.warning("resolution %dx%d matches no category; padding to next multiple of %d", h, w, GRID)
        padded = (_next_multiple(h), _next_multiple(w))
        return padded, (padded[0] // GRID, padded[1] // GRID), 1.0, "fallback"
    t = cat.target
    if t >= h and t >= w:
        padded = (t, t)
    else:
        padded = (_next_multiple(h), _next_multiple(w))
    return padded, (t // GRID, t // GRID), cat.weight, cat.name


def _pad(image: np.ndarray, pad: tuple[int, int, int, int]) -> np.ndarray:
    top, bottom, left, right = pad
    return np.pad(image, ((top, bottom), (left, right)), mode="edge")


def split_image(image, categories: CategoryTable | None = None, source_id: str = "") -> RegionGrid:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InputError(f"split_image expects a 2-D grayscale image, got shape {image.shape}")
    h, w = image.shape
    padded_shape, model_size, weight, name = _geometry(h, w, categories)
    pad = _symmetric(padded_shape[0] - h) + _symmetric(padded_shape[1] - w)
    padded = _pad(image, pad)
    rh, rw = padded_shape[0] // GRID, padded_shape[1] // GRID
    regions = []
    for r in range(GRID):
        for c in range(GRID):
            native = padded[r * rh : (r + 1) * rh, c * rw : (c + 1) * rw]
            regions.append(Region(r, c, _resize(native, model_size), native, weight))
    return RegionGrid(source_id, (h, w), name, pad, (rh, rw), padded_shape, regions)


@dataclass(frozen=True)
class MaskLabeling:
    mask: np.ndarray
    positive_threshold: float = 0.01

    def __post_init__(self):
        if not 0 < self.positive_threshold <= 1:
            raise ConfigError(f"positive_threshold must be in (0, 1], got {self.positive_threshold}")


def label_regions(grid: RegionGrid, labeling: MaskLabeling) -> RegionGrid:
    """Copy of ``grid`` with label = 1 where the mask covers >= threshold of a region."""
    mask = np.asarray(labeling.mask) > 0
    if mask.shape != grid.source_resolution:
        raise InputError(f"mask shape {mask.shape} != image shape {grid.source_resolution}")
    padded = _pad(mask, grid.pad)
    rh, rw = grid.region_size
    regions = []
    for reg in grid.regions:
        frac = float(padded[reg.row * rh : (reg.row + 1) * rh, reg.col * rw : (reg.col + 1) * rw].mean())
        label = int(frac >= labeling.positive_threshold)
        regions.append(replace(reg, label=label, positive_fraction=frac))
    return replace(grid, regions=regions)


@dataclass(frozen=True)
class RegionPrediction:
    row: int
    col: int
    label: int
    confidence: float


@dataclass
class Annotation:
    image: np.ndarray  # cropped grayscale reconstruction, untouched
    rgb: np.ndarray  # H x W x 3 with positive-region outlines
    highlight: np.ndarray  # boolean mask of outline pixels
    records: list[RegionPrediction]


def _outline(shape, top, left, h, w, thickness) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[top : top + h, left : left + w] = True
    inner = np.zeros(shape, dtype=bool)
    inner[top + thickness : top + h - thickness, left + thickness : left + w - thickness] = True
    return m & ~inner


def stitch_predictions(grid: RegionGrid, predictions, confidences) -> Annotation:
    predictions = np.asarray(predictions).reshape(-1)
    confidences = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if predictions.size != N_REGIONS or confidences.size != N_REGIONS:
        raise StructuralError(
            f"need {N_REGIONS} predictions and confidences, got {predictions.size} and {confidences.size}"
        )
    padded = grid.reassemble()
    rgb = np.repeat(padded[:, :, None], 3, axis=2)
    highlight = np.zeros(padded.shape, dtype=bool)
    rh, rw = grid.region_size
    thickness = max(1, min(rh, rw) // 16)
    records = []
    for reg, pred, conf in zip(grid.regions, predictions, confidences):
        label = int(pred)
        records.append(RegionPrediction(reg.row, reg.col, label, float(conf)))
        if label:
            ring = _outline(padded.shape, reg.row * rh, reg.col * rw, rh, rw, thickness)
            intensity = float(np.clip(conf, 0.0, 1.0))
            rgb[ring] = (intensity, 0.0, 0.0)
            highlight |= ring
    return Annotation(grid.crop(padded), grid.crop(rgb), grid.crop(highlight), records)


def save_annotation(annotation: Annotation, path) -> None:
    rgb = np.clip(np.round(annotation.rgb * 255), 0, 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def write_sidecar(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SIDECAR_FIELDS)
        for r in records:
            writer.writerow([r.row, r.col, r.label, repr(float(r.confidence))])


def read_sidecar(path) -> list[RegionPrediction]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != SIDECAR_FIELDS:
                raise FormatError(f"{path}: header must be {','.join(SIDECAR_FIELDS)}")
            return [
                RegionPrediction(int(r["row"]), int(r["col"]), int(r["label"]), float(r["confidence"]))
                for r in reader
            ]
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed record: {exc}") from exc


def class_weights(labels, n_classes: int = 2) -> np.ndarray:
    """Inverse-frequency weights ``N / (n_classes * N_c)``, indexed by class."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels must lie in 0..{n_classes - 1}")
    counts = np.bincount(labels, minlength=n_classes)
    missing = [c for c in range(n_classes) if counts[c] == 0]
    if missing:
        raise ConfigError(
            f"class(es) {missing} absent from the training labels; "
            "adjust the train/test split or the labeling threshold"
        )
    return labels.size / (n_classes * counts.astype(np.float64))
