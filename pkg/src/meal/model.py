"""Desk-scale segmentation model and the fixed patch descriptor.

The model is a per-pixel multinomial logistic classifier over local
handcrafted features. The descriptor used for the manifold embedding does not
depend on the model, so it stays stable across retraining.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from meal.data import IGNORE_LABEL, ImageSample, PatchRef, Pool

N_HIST_BINS = 8
CHECKPOINT_MAGIC = b"MEAL"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 8
    learning_rate: float = 0.001
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.epochs < 1:
            raise ModelError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ModelError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ModelError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass(frozen=True)
class ProbabilityMap:
    values: np.ndarray  # (h, w, C)
    image_id: str


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    patch: PatchRef


def pixel_features(image: ImageSample) -> np.ndarray:
    """(h, w, 3 * channels + 2): raw value, 3x3 mean, 3x3 std per channel, then row/h, col/w."""
    px = image.pixels
    size = (3, 3, 1)
    mean = ndimage.uniform_filter(px, size=size, mode="reflect")
    sq = ndimage.uniform_filter(px * px, size=size, mode="reflect")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    rows, cols = np.mgrid[0 : image.h, 0 : image.w]
    coords = np.stack([rows / image.h, cols / image.w], axis=-1)
    return np.concatenate([px, mean, std, coords], axis=-1)


def n_pixel_features(channels: int) -> int:
    return 3 * channels + 2


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


class PixelLogisticModel:
    """Pixel logits are ``features @ weights + bias``."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, channels: int):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.shape != (n_pixel_features(channels), bias.shape[0]):
            raise ModelError(f"weights shape {weights.shape} inconsistent with {channels} channels")
        self.weights = weights
        self.bias = bias
        self.channels = channels

    @classmethod
    def initialize(cls, channels: int, n_classes: int, seed: int = 0, scale: float = 0.01):
        rng = np.random.default_rng(seed)
        d = n_pixel_features(channels)
        if scale == 0:
            return cls(np.zeros((d, n_classes)), np.zeros(n_classes), channels)
        w = rng.uniform(-scale, scale, size=(d, n_classes))
        b = rng.uniform(-scale, scale, size=n_classes)
        return cls(w, b, channels)

    @property
    def n_classes(self) -> int:
        return self.bias.shape[0]

    def theta(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def probs_from_features(self, feats: np.ndarray) -> np.ndarray:
        return _softmax(feats @ self.weights + self.bias)

    def predict_probs(self, image: ImageSample) -> ProbabilityMap:
        return predict_probs(self, image)

    def save(self, path) -> None:
        header = struct.pack(
            "<4sHHII",
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            self.channels,
            self.weights.shape[0],
            self.n_classes,
        )
        Path(path).write_bytes(header + self.theta().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> PixelLogisticModel:
        buf = Path(path).read_bytes()
        if len(buf) < 16:
            raise ModelError("checkpoint truncated")
        magic, version, channels, d, c = struct.unpack("<4sHHII", buf[:16])
        if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
            raise ModelError(f"not a model checkpoint (magic {magic!r}, version {version})")
        theta = np.frombuffer(buf[16:], dtype="<f8")
        if theta.size != d * c + c:
            raise ModelError(f"checkpoint holds {theta.size} values, expected {d * c + c}")
        return cls(theta[: d * c].reshape(d, c).copy(), theta[d * c :].copy(), channels)


def predict_probs(model: PixelLogisticModel, image: ImageSample, feats: np.ndarray | None = None) -> ProbabilityMap:
    if image.channels != model.channels:
        raise ModelError(f"{image.id}: image has {image.channels} channels, model expects {model.channels}")
    if feats is None:
        feats = pixel_features(image)
    return ProbabilityMap(model.probs_from_features(feats), image.id)


def _gather_labeled(
    samples: Sequence[ImageSample],
    pool: Pool,
    features: Mapping[str, np.ndarray] | None,
) -> tuple[np.ndarray, np.ndarray]:
    by_id = {s.id: s for s in samples}
    cache: dict[str, np.ndarray] = dict(features or {})
    xs, ys = [], []
    for p in pool.sorted_labeled():
        s = by_id.get(p.image_id)
        if s is None:
            raise ModelError(f"labeled patch refers to unknown image {p.image_id!r}")
        if s.label_map is None:
            raise ModelError(f"{s.id}: labeled patch has no ground truth")
        if s.id not in cache:
            cache[s.id] = pixel_features(s)
        rs, cs = p.slices()
        xs.append(cache[s.id][rs, cs].reshape(-1, cache[s.id].shape[-1]))
        ys.append(s.label_map[rs, cs].ravel().astype(np.int64))
    return np.stack(xs), np.stack(ys)


def train_from_scratch(
    samples: Sequence[ImageSample],
    pool: Pool,
    cfg: TrainConfig,
    n_classes: int,
    features: Mapping[str, np.ndarray] | None = None,
) -> PixelLogisticModel:
    """Fresh model fitted by minibatch Adam on pixel cross-entropy.

    Only pixels inside labeled patches contribute; ignore-labelled pixels are
    masked out. A minibatch is ``cfg.batch_size`` patches; patch order is
    reshuffled every epoch from ``cfg.seed``.
    """
    if not pool.labeled:
        raise ModelError("cannot train on an empty labeled pool")
    x, y = _gather_labeled(samples, pool, features)  # (P, n, F), (P, n)
    valid = y != IGNORE_LABEL
    if not valid.any():
        raise ModelError("every labeled pixel is ignore-labelled")
    if (y[valid] >= n_classes).any():
        raise ModelError(f"label value >= n_classes ({n_classes})")

    channels = samples[0].channels
    model = PixelLogisticModel.initialize(channels, n_classes, seed=cfg.seed, scale=cfg.init_scale)
    w, b = model.weights, model.bias
    rng = np.random.default_rng(cfg.seed)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    mw, vw = np.zeros_like(w), np.zeros_like(w)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    t = 0
    n_patches = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n_patches)
        for start in range(0, n_patches, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            mask = valid[idx].ravel()
            if not mask.any():
                continue
            xb = x[idx].reshape(-1, x.shape[-1])[mask]
            yb = y[idx].ravel()[mask]
            grad = _softmax(xb @ w + b)
            grad[np.arange(yb.size), yb] -= 1.0
            grad /= yb.size
            gw = xb.T @ grad
            gb = grad.sum(axis=0)

            t += 1
            mw = beta1 * mw + (1 - beta1) * gw
            vw = beta2 * vw + (1 - beta2) * gw * gw
            mb = beta1 * mb + (1 - beta1) * gb
            vb = beta2 * vb + (1 - beta2) * gb * gb
            c1 = 1 - beta1**t
            c2 = 1 - beta2**t
            w -= cfg.learning_rate * (mw / c1) / (np.sqrt(vw / c2) + eps)
            b -= cfg.learning_rate * (mb / c1) / (np.sqrt(vb / c2) + eps)
    return model


def cross_entropy(model: PixelLogisticModel, samples: Sequence[ImageSample], pool: Pool) -> float:
    """Mean pixel cross-entropy over the labeled patches of ``pool``."""
    x, y = _gather_labeled(samples, pool, None)
    valid = y != IGNORE_LABEL
    xv, yv = x[valid], y[valid]
    p = model.probs_from_features(xv)
    return float(-np.mean(np.log(np.maximum(p[np.arange(yv.size), yv], 1e-300))))


# ---------------------------------------------------------------------------
# patch descriptor


def extract_features(image: ImageSample, patch: PatchRef) -> FeatureVector:
    """Per-channel mean, std and 8-bin L1-normalised histogram; length 10 * channels."""
    if patch.image_id != image.id:
        raise ModelError(f"patch {patch.key} does not belong to image {image.id!r}")
    top, left, ph, pw = patch.pixel_rect
    if top < 0 or left < 0 or top + ph > image.h or left + pw > image.w:
        raise ModelError(f"patch {patch.key} lies outside image {image.id!r}")
    rs, cs = patch.slices()
    return FeatureVector(_descriptor(image.pixels[rs, cs]), patch)


def _descriptor(block: np.ndarray) -> np.ndarray:
    flat = block.reshape(-1, block.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    bins = np.minimum((flat * N_HIST_BINS).astype(np.int64), N_HIST_BINS - 1)
    hist = np.stack([np.bincount(bins[:, c], minlength=N_HIST_BINS) for c in range(flat.shape[1])])
    hist = hist / flat.shape[0]
    return np.concatenate([mean, std, hist.ravel()])


def descriptor_matrix(samples: Sequence[ImageSample], patches: Sequence[PatchRef]) -> np.ndarray:
    """Stack descriptors for ``patches`` in the given order."""
    by_id = {s.id: s for s in samples}
    if not patches:
        return np.zeros((0, 10 * samples[0].channels)) if samples else np.zeros((0, 0))
    return np.stack([extract_features(by_id[p.image_id], p).values for p in patches])
