"""Pixel entropy maps, per-patch scores and top-N informative selection."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from meal.data import PatchGrid, PatchRef
from meal.model import ProbabilityMap


class UncertaintyError(ValueError):
    pass


@dataclass(frozen=True)
class EntropyMap:
    values: np.ndarray  # (h, w)
    image_id: str


@dataclass(frozen=True)
class PatchScore:
    patch: PatchRef
    score: float


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) over the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.isnan(p).any() or (p < 0).any():
        raise UncertaintyError("probabilities must be non-negative and not NaN")
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def entropy_map(probs: ProbabilityMap) -> EntropyMap:
    return EntropyMap(entropy(probs.values), probs.image_id)


def score_patches(emap: EntropyMap, grid: PatchGrid) -> list[PatchScore]:
    """Mean pixel entropy of every grid cell, row-major."""
    h, w = emap.values.shape
    try:
        g = grid.for_shape(h, w)
    except ValueError as exc:
        raise UncertaintyError(str(exc)) from None
    blocks = emap.values.reshape(g.rows, g.patch_h, g.cols, g.patch_w)
    means = blocks.mean(axis=(1, 3))
    return [
        PatchScore(
            PatchRef(emap.image_id, r, c, (r * g.patch_h, c * g.patch_w, g.patch_h, g.patch_w)),
            float(means[r, c]),
        )
        for r in range(g.rows)
        for c in range(g.cols)
    ]


def select_top_informative(scores: Iterable[PatchScore], n_informative: int) -> list[PatchRef]:
    """Highest scores first; ties go to the smaller (image_id, row, col)."""
    if n_informative < 1:
        raise UncertaintyError(f"n_informative must be >= 1, got {n_informative}")
    best = heapq.nsmallest(n_informative, scores, key=lambda s: (-s.score, s.patch.key))
    return [s.patch for s in best]


def rank_scores(scores: Sequence[PatchScore]) -> list[PatchScore]:
    return sorted(scores, key=lambda s: (-s.score, s.patch.key))
