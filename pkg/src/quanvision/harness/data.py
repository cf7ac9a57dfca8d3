"""Corpora: directory ingestion and the synthetic crack generator."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError, InputError
from ..imaging import CategoryTable, MaskLabeling, RegionGrid, label_regions, split_image
from ..quanv import normalize_unit

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass
class Sample:
    image: np.ndarray  # grayscale, [0, 1]
    label: int
    source_id: str
    mask: np.ndarray | None = None
    grid: RegionGrid | None = None


@dataclass
class Corpus:
    samples: list[Sample]
    skipped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        img.load()
        arr = np.asarray(img.convert("RGB") if img.mode not in ("L", "I", "F", "I;16") else img, dtype=np.float64)
    return arr


def _read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0


def ingest_dataset(
    path, stage: int, categories: CategoryTable | None = None, positive_threshold: float = 0.01
) -> Corpus:
    """Load a directory corpus, ordered by filename.

    Stage 1 expects ``positive/`` and ``negative/`` subdirectories.  Stage 2
    expects images at the top level and same-named masks under ``masks/``;
    each sample is split into a labeled region grid.
    """
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"dataset directory {root} does not exist")
    samples, skipped = [], []
    if stage == 1:
        for label, name in ((1, "positive"), (0, "negative")):
            sub = root / name
            if not sub.is_dir():
                raise InputError(f"missing class directory {sub}")
            files = _image_files(sub)
            if not files:
                raise InputError(f"class directory {sub} is empty")
            for f in files:
                try:
                    image = normalize_unit(_read_image(f))
                except (OSError, UnidentifiedImageError) as exc:
                    log.warning("skipping unreadable image %s: %s", f, exc)
                    skipped.append(str(f))
                    continue
                samples.append(Sample(image, label, f"{name}/{f.stem}"))
        samples.sort(key=lambda s: s.source_id)
    elif stage == 2:
        mask_dir = root / "masks"
        if not mask_dir.is_dir():
            raise InputError(f"stage 2 dataset needs a masks/ directory under {root}")
        files = _image_files(root)
        if not files:
            raise InputError(f"no images in {root}")
        for f in files:
            mask_path = mask_dir / f.name
            if not mask_path.exists():
                matches = [m for m in _image_files(mask_dir) if m.stem == f.stem]
                if not matches:
                    raise InputError(f"no mask for {f.name} in {mask_dir}")
                mask_path = matches[0]
            try:
                image = normalize_unit(_read_image(f))
                mask = _read_mask(mask_path)
            except (OSError, UnidentifiedImageError) as exc:
                log.warning("skipping unreadable image %s: %s", f, exc)
                skipped.append(str(f))
                continue
            samples.append(make_stage2_sample(image, mask, f.stem, categories, positive_threshold))
    else:
        raise ConfigError(f"stage must be 1 or 2, got {stage}")
    if skipped:
        log.warning("skipped %d unreadable file(s)", len(skipped))
    if not samples:
        raise InputError(f"no readable images in {root}")
    return Corpus(samples, skipped)


def make_stage2_sample(image, mask, source_id, categories, positive_threshold) -> Sample:
    if mask.shape != image.shape:
        raise InputError(f"{source_id}: mask shape {mask.shape} != image shape {image.shape}")
    grid = split_image(image, categories, source_id)
    grid = label_regions(grid, MaskLabeling(mask, positive_threshold))
    return Sample(image, int(mask.any()), source_id, mask, grid)


# ---- synthetic cracks -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticCrackSpec:
    """Dark wavy polylines on a mottled concrete-like background."""

    image_size: tuple[int, int] = (32, 32)
    crack_probability: float = 0.5
    crack_width_px: float = 2.0
    crack_waviness: float = 0.35
    background_noise_level: float = 0.06
    seed: int = 0
    crack_depth: float = 0.5
    stain_rate: float = 0.5

    def __post_init__(self):
        size = self.image_size
        if isinstance(size, int):
            size = (size, size)
        object.__setattr__(self, "image_size", (int(size[0]), int(size[1])))
        if min(self.image_size) < 4:
            raise ConfigError(f"image_size too small: {self.image_size}")
        if not 0 <= self.crack_probability <= 1:
            raise ConfigError("crack_probability must lie in [0, 1]")
        if self.crack_width_px <= 0:
            raise ConfigError("crack_width_px must be positive")
        if self.background_noise_level < 0 or self.crack_waviness < 0:
            raise ConfigError("noise level and waviness must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _background(rng, h, w, noise) -> np.ndarray:
    coarse = gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 10, mode="wrap")
    coarse /= coarse.std() + 1e-12
    fine = rng.standard_normal((h, w))
    return 0.6 + 0.05 * coarse + noise * fine


def _crack_path(rng, h, w, waviness) -> list[tuple[float, float]]:
    """Random walk entering from one edge and heading across the image."""
    edge = int(rng.integers(4))
    if edge == 0:
        x, y, heading = rng.uniform(0, w), 0.0, math.pi / 2
    elif edge == 1:
        x, y, heading = rng.uniform(0, w), h - 1.0, -math.pi / 2
    elif edge == 2:
        x, y, heading = 0.0, rng.uniform(0, h), 0.0
    else:
        x, y, heading = w - 1.0, rng.uniform(0, h), math.pi
    heading += rng.uniform(-0.6, 0.6)
    base = heading
    step = max(h, w) / 24
    points = [(x, y)]
    for _ in range(200):
        heading += waviness * rng.standard_normal()
        heading = base + float(np.clip(heading - base, -1.2, 1.2))
        x += step * math.cos(heading)
        y += step * math.sin(heading)
        points.append((x, y))
        if not (-step <= x <= w + step and -step <= y <= h + step):
            break
    return points


def _draw(points, h, w, width) -> np.ndarray:
    canvas = Image.new("L", (w, h), 0)
    ImageDraw.Draw(canvas).line(points, fill=255, width=max(1, int(round(width))), joint="curve")
    return np.asarray(canvas) > 0


def generate_synthetic(spec: SyntheticCrackSpec, n: int, start: int = 0) -> list[Sample]:
    """``n`` samples; sample ``i`` depends only on (spec, start + i)."""
    if n <= 0:
        raise ConfigError(f"n must be positive, got {n}")
    h, w = spec.image_size
    out = []
    for index in range(start, start + n):
        rng = np.random.default_rng([spec.seed, index])
        image = _background(rng, h, w, spec.background_noise_level)
        if rng.random() < spec.stain_rate:
            # round dark stain: a distractor that is not a crack
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(0.06, 0.15) * min(h, w)
            yy, xx = np.mgrid[0:h, 0:w]
            image -= 0.12 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        mask = np.zeros((h, w), dtype=bool)
        if rng.random() < spec.crack_probability:
            while not mask.any():
                mask = _draw(_crack_path(rng, h, w, spec.crack_waviness), h, w, spec.crack_width_px)
            depth = spec.crack_depth * rng.uniform(0.7, 1.0)
            profile = gaussian_filter(mask.astype(np.float64), 0.5)
            image -= depth * profile / profile.max()
        image = np.clip(image, 0.0, 1.0)
        label = int(mask.any())
        out.append(Sample(image, label, f"synthetic-{h}x{w}-{index:05d}", mask))
    return out


def write_corpus(samples, root, stage: int) -> None:
    """Write samples in the directory layout ``ingest_dataset`` reads."""
    root = Path(root)
    for s in samples:
        pixels = np.clip(np.round(s.image * 255), 0, 255).astype(np.uint8)
        if stage == 1:
            target = root / ("positive" if s.label else "negative") / f"{s.source_id}.png"
        else:
            target = root / f"{s.source_id}.png"
            (root / "masks").mkdir(parents=True, exist_ok=True)
            Image.fromarray((s.mask * 255).astype(np.uint8)).save(root / "masks" / f"{s.source_id}.png")
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(target)
