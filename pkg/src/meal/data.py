"""Images, patch grids, the labeled/unlabeled pool and the synthetic scene generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from meal import pnm
from meal.rng import stream

IGNORE_LABEL = 255


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ImageSample:
    """One image with values in [0, 1], shape (h, w, channels), and an optional label map."""

    id: str
    pixels: np.ndarray
    label_map: np.ndarray | None = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim == 2:
            px = px[:, :, None]
            object.__setattr__(self, "pixels", px)
        if px.ndim != 3:
            raise DatasetError(f"{self.id}: pixels must be (h, w, channels), got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min(initial=0.0) < 0.0 or px.max(initial=0.0) > 1.0:
            raise DatasetError(f"{self.id}: pixel values must lie in [0, 1]")
        if self.label_map is not None and self.label_map.shape != px.shape[:2]:
            raise DatasetError(
                f"{self.id}: label map shape {self.label_map.shape} != image shape {px.shape[:2]}"
            )

    @property
    def h(self) -> int:
        return self.pixels.shape[0]

    @property
    def w(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True, order=True)
class PatchRef:
    image_id: str
    row: int
    col: int
    # (top, left, height, width)
    pixel_rect: tuple[int, int, int, int] = field(compare=False)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.image_id, self.row, self.col)

    def slices(self) -> tuple[slice, slice]:
        top, left, ph, pw = self.pixel_rect
        return slice(top, top + ph), slice(left, left + pw)


@dataclass(frozen=True)
class PatchGrid:
    """A rows x cols tiling. Patch dims are zero until bound to an image shape."""

    rows: int = 4
    cols: int = 4
    patch_h: int = 0
    patch_w: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DatasetError(f"grid must have at least one row and column, got {self.rows}x{self.cols}")

    def for_shape(self, h: int, w: int) -> PatchGrid:
        if h % self.rows or w % self.cols:
            raise DatasetError(f"image {h}x{w} is not divisible by a {self.rows}x{self.cols} grid")
        bound = PatchGrid(self.rows, self.cols, h // self.rows, w // self.cols)
        if self.patch_h and (self.patch_h, self.patch_w) != (bound.patch_h, bound.patch_w):
            raise DatasetError(
                f"image {h}x{w} gives patches {bound.patch_h}x{bound.patch_w}, "
                f"grid expects {self.patch_h}x{self.patch_w}"
            )
        return bound

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols


def tile(image: ImageSample, grid: PatchGrid) -> list[PatchRef]:
    """Row-major patch refs covering ``image`` exactly."""
    g = grid.for_shape(image.h, image.w)
    return [
        PatchRef(image.id, r, c, (r * g.patch_h, c * g.patch_w, g.patch_h, g.patch_w))
        for r in range(g.rows)
        for c in range(g.cols)
    ]


@dataclass(frozen=True)
class Pool:
    labeled: frozenset = frozenset()
    unlabeled: frozenset = frozenset()
    query: frozenset = frozenset()

    def __post_init__(self):
        if self.labeled & self.unlabeled:
            raise DatasetError("labeled and unlabeled sets overlap")

    @classmethod
    def from_patches(cls, patches: Iterable[PatchRef]) -> Pool:
        return cls(unlabeled=frozenset(patches))

    @property
    def total(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def sorted_unlabeled(self) -> list[PatchRef]:
        return sorted(self.unlabeled)

    def sorted_labeled(self) -> list[PatchRef]:
        return sorted(self.labeled)


def reveal_labels(pool: Pool, query: Iterable[PatchRef]) -> Pool:
    """Move ``query`` from the unlabeled to the labeled set (simulated oracle)."""
    query = frozenset(query)
    missing = query - pool.unlabeled
    if missing:
        first = min(missing)
        raise DatasetError(f"{len(missing)} query patch(es) not in the unlabeled pool, e.g. {first.key}")
    return Pool(
        labeled=pool.labeled | query,
        unlabeled=pool.unlabeled - query,
        query=query,
    )


# ---------------------------------------------------------------------------
# manifest datasets


def load_dataset(
    manifest_path, grid: PatchGrid, n_classes: int | None = None
) -> tuple[list[ImageSample], Pool]:
    """Read ``image<TAB>label`` pairs (P6 images, P5 labels) and tile them.

    Relative paths resolve against the manifest's directory. Label value 255 is
    ignore; with ``n_classes`` given, any other value >= n_classes is rejected.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    samples: list[ImageSample] = []
    seen: set[str] = set()
    bound: PatchGrid | None = None
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"{manifest_path}:{lineno}: expected image<TAB>label")
        img_path, lbl_path = (base / p.strip() for p in parts)
        for p in (img_path, lbl_path):
            if not p.is_file():
                raise DatasetError(f"{manifest_path}:{lineno}: missing file {p}")
        raw = pnm.read(img_path)
        labels = pnm.read(lbl_path)
        if labels.ndim != 2:
            raise DatasetError(f"{lbl_path}: label file must be a graymap (P5)")
        if n_classes is not None:
            bad = (labels >= n_classes) & (labels != IGNORE_LABEL)
            if bad.any():
                raise DatasetError(f"{lbl_path}: label value {int(labels[bad][0])} >= {n_classes} classes")
        sample_id = img_path.stem
        if sample_id in seen:
            raise DatasetError(f"{manifest_path}:{lineno}: duplicate image id {sample_id!r}")
        seen.add(sample_id)
        sample = ImageSample(sample_id, raw.astype(np.float64) / 255.0, labels)
        g = (bound or grid).for_shape(sample.h, sample.w)
        bound = bound or g
        samples.append(sample)
    if not samples:
        raise DatasetError(f"{manifest_path}: no entries")
    patches = [p for s in samples for p in tile(s, bound)]
    return samples, Pool.from_patches(patches)


def write_dataset(samples: Sequence[ImageSample], out_dir) -> Path:
    """Write samples as PPM/PGM pairs plus ``manifest.txt``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        if s.label_map is None:
            raise DatasetError(f"{s.id}: cannot write a sample without labels")
        px = np.rint(s.pixels * 255.0).astype(np.uint8)
        if px.shape[2] == 1:
            px = np.repeat(px, 3, axis=2)
        img_rel = f"images/{s.id}.ppm"
        lbl_rel = f"labels/{s.id}.pgm"
        pnm.write(out_dir / img_rel, px)
        pnm.write(out_dir / lbl_rel, s.label_map.astype(np.uint8))
        lines.append(f"{img_rel}\t{lbl_rel}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# synthetic scenes

# class 0 is background; shape classes take colours in this order. Entries 4
# and 5 mix two earlier colours (red+blue, red+green): a model that has never
# seen them splits its vote, yet they stay linearly separable once labeled.
PALETTE = np.array(
    [
        [0.85, 0.20, 0.20],
        [0.20, 0.70, 0.25],
        [0.20, 0.30, 0.85],
        [0.85, 0.20, 0.85],
        [0.90, 0.85, 0.20],
        [0.20, 0.80, 0.85],
        [0.95, 0.55, 0.10],
        [0.55, 0.30, 0.10],
        [0.95, 0.95, 0.95],
        [0.05, 0.05, 0.05],
    ]
)
BACKGROUND = np.array([0.45, 0.42, 0.38])


@dataclass(frozen=True)
class SceneSpec:
    """Scene parameters for :func:`generate_synthetic`.

    ``class_weights`` gives the relative draw weight of each shape class
    (classes 1..n_classes-1). When omitted, all shape classes get weight 1
    except the last, which gets ``rare_weight``.
    """

    height: int = 48
    width: int = 64
    n_classes: int = 5
    shape_density: float = 3.0
    size_range: tuple[float, float] = (0.15, 0.40)
    class_weights: tuple[float, ...] | None = None
    rare_weight: float = 0.1
    noise: float = 0.04
    texture: float = 0.06
    grid_rows: int = 4
    grid_cols: int = 4

    def weights(self) -> np.ndarray:
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if w.shape != (self.n_classes - 1,):
                raise DatasetError(
                    f"class_weights needs {self.n_classes - 1} entries, got {len(self.class_weights)}"
                )
        else:
            w = np.ones(self.n_classes - 1)
            w[-1] = self.rare_weight
        if np.any(w < 0) or w.sum() <= 0:
            raise DatasetError("class weights must be non-negative with a positive sum")
        return w

    def validate(self) -> None:
        if self.n_classes < 2:
            raise DatasetError(f"need at least 2 classes (background + one shape), got {self.n_classes}")
        if self.n_classes - 1 > len(PALETTE):
            raise DatasetError(f"at most {len(PALETTE) + 1} classes supported")
        PatchGrid(self.grid_rows, self.grid_cols).for_shape(self.height, self.width)
        lo, hi = self.size_range
        if not 0 < lo <= hi <= 1:
            raise DatasetError(f"size_range must satisfy 0 < lo <= hi <= 1, got {self.size_range}")
        if self.shape_density <= 0 or self.noise < 0:
            raise DatasetError("shape_density must be positive and noise non-negative")
        self.weights()


def expected_class_frequency(spec: SceneSpec) -> np.ndarray:
    """Nominal per-class pixel fraction, accounting for border clipping but not occlusion."""
    spec.validate()
    lo, hi = spec.size_range
    # E[s - s^2/4] for s ~ U(lo, hi): mean visible extent of a shape of relative size s
    # whose centre is uniform over the image
    mean_s = (lo + hi) / 2
    mean_s2 = (lo * lo + lo * hi + hi * hi) / 3
    visible = mean_s - mean_s2 / 4
    area = visible**2 * (1 + math.pi / 4) / 2
    w = spec.weights()
    shapes = spec.shape_density * w / w.sum() * area
    return np.concatenate([[max(0.0, 1.0 - shapes.sum())], shapes])


def _render_one(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.height, spec.width
    weights = spec.weights()
    probs = weights / weights.sum()
    yy, xx = np.mgrid[0:h, 0:w]
    v, u = yy / h, xx / w

    base = BACKGROUND + rng.uniform(-0.04, 0.04, size=3)
    fx, fy = rng.uniform(1.0, 4.0, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    pattern = np.sin(2 * np.pi * fx * u + phase[0]) * np.sin(2 * np.pi * fy * v + phase[1])
    pixels = base[None, None, :] + spec.texture * pattern[:, :, None]
    labels = np.zeros((h, w), dtype=np.uint8)

    n_shapes = max(1, int(rng.poisson(spec.shape_density)))
    for _ in range(n_shapes):
        cls = 1 + int(rng.choice(len(probs), p=probs))
        sh = rng.uniform(*spec.size_range) * h
        sw = rng.uniform(*spec.size_range) * w
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.random() < 0.5:
            mask = (np.abs(yy + 0.5 - cy) <= sh / 2) & (np.abs(xx + 0.5 - cx) <= sw / 2)
        else:
            mask = ((yy + 0.5 - cy) / (sh / 2)) ** 2 + ((xx + 0.5 - cx) / (sw / 2)) ** 2 <= 1.0
        color = PALETTE[cls - 1] + rng.normal(0.0, 0.03, size=3)
        pixels[mask] = color
        labels[mask] = cls

    pixels = pixels + rng.normal(0.0, spec.noise, size=pixels.shape)
    quantized = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    return quantized, labels


def generate_synthetic(seed: int, n_images: int, spec: SceneSpec | None = None) -> list[ImageSample]:
    """Coloured rectangles and ellipses on a textured, noisy background.

    Each image draws from its own stream, so output is identical for a given
    (seed, spec) and image ``i`` does not depend on how many images follow it.
    Pixel values are quantized to 8 bits so that files round-trip exactly.
    """
    spec = spec or SceneSpec()
    spec.validate()
    if n_images < 0:
        raise DatasetError("n_images must be non-negative")
    samples = []
    for i in range(n_images):
        px, labels = _render_one(spec, stream(seed, f"synthetic-image-{i}"))
        samples.append(ImageSample(f"img_{i:05d}", px.astype(np.float64) / 255.0, labels))
    return samples


def class_pixel_frequency(samples: Sequence[ImageSample], n_classes: int) -> np.ndarray:
    counts = np.zeros(n_classes, dtype=np.int64)
    for s in samples:
        lm = s.label_map[s.label_map != IGNORE_LABEL]
        counts += np.bincount(lm.ravel(), minlength=n_classes)[:n_classes]
    return counts / max(1, counts.sum())
