"""Acquisition policies: random, entropy, MEAL and MEAL with a per-step fit."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from meal.data import ImageSample, PatchGrid, PatchRef, Pool
from meal.manifold import UmapConfig, UmapModel, fit_transform, transform
from meal.model import PixelLogisticModel, descriptor_matrix, predict_probs
from meal.representative import kmeanspp_select
from meal.rng import fork_seed
from meal.uncertainty import PatchScore, entropy_map, score_patches, select_top_informative

STRATEGIES = ("random", "entropy", "meal", "meal_ft", "full")


class AcquisitionError(ValueError):
    pass


@dataclass(frozen=True)
class AcquisitionConfig:
    strategy: str = "meal"
    query_size: int = 32
    informative_size: int = 200
    steps: int = 5
    init_patches: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise AcquisitionError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.query_size < 1:
            raise AcquisitionError(f"query_size must be >= 1, got {self.query_size}")
        if self.steps < 1:
            raise AcquisitionError(f"steps must be >= 1, got {self.steps}")
        if self.init_patches < 1:
            raise AcquisitionError(f"init_patches must be >= 1, got {self.init_patches}")
        if self.strategy in ("meal", "meal_ft") and self.query_size > self.informative_size:
            raise AcquisitionError(
                f"informative_size ({self.informative_size}) must be >= query_size ({self.query_size})"
            )


def acquire_random(pool: Pool, n: int, seed: int) -> list[PatchRef]:
    if not pool.unlabeled:
        raise AcquisitionError("unlabeled pool is empty")
    candidates = pool.sorted_unlabeled()
    if n >= len(candidates):
        return candidates
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=n, replace=False)
    return [candidates[i] for i in picks]


def unlabeled_scores(
    model: PixelLogisticModel,
    samples: Sequence[ImageSample],
    pool: Pool,
    grid: PatchGrid,
    pixel_feats: Mapping[str, np.ndarray] | None = None,
) -> list[PatchScore]:
    """Mean-entropy score of every unlabeled patch."""
    if not pool.unlabeled:
        raise AcquisitionError("unlabeled pool is empty")
    wanted = {p.image_id for p in pool.unlabeled}
    scores = []
    for s in samples:
        if s.id not in wanted:
            continue
        feats = pixel_feats.get(s.id) if pixel_feats else None
        emap = entropy_map(predict_probs(model, s, feats))
        scores.extend(ps for ps in score_patches(emap, grid) if ps.patch in pool.unlabeled)
    return scores


def acquire_entropy(
    model: PixelLogisticModel,
    samples: Sequence[ImageSample],
    pool: Pool,
    grid: PatchGrid,
    n: int,
    pixel_feats: Mapping[str, np.ndarray] | None = None,
) -> list[PatchRef]:
    return select_top_informative(unlabeled_scores(model, samples, pool, grid, pixel_feats), n)


def _descriptors(
    samples: Sequence[ImageSample],
    patches: Sequence[PatchRef],
    cache: Mapping[PatchRef, np.ndarray] | None,
) -> np.ndarray:
    if cache is not None:
        return np.stack([cache[p] for p in patches])
    return descriptor_matrix(samples, patches)


def acquire_meal(
    model: PixelLogisticModel,
    samples: Sequence[ImageSample],
    pool: Pool,
    grid: PatchGrid,
    phi: UmapModel,
    n: int,
    n_informative: int,
    seed: int,
    pixel_feats: Mapping[str, np.ndarray] | None = None,
    descriptors: Mapping[PatchRef, np.ndarray] | None = None,
) -> list[PatchRef]:
    """Top-``n_informative`` entropy patches, embedded by ``phi``, thinned to ``n`` by D^2 seeding."""
    top = acquire_entropy(model, samples, pool, grid, n_informative, pixel_feats)
    points = transform(phi, _descriptors(samples, top, descriptors), top)
    chosen = kmeanspp_select(points, min(n, len(points)), seed)
    return [p.patch for p in chosen.chosen]


def acquire_meal_ft(
    model: PixelLogisticModel,
    samples: Sequence[ImageSample],
    pool: Pool,
    grid: PatchGrid,
    n: int,
    n_informative: int,
    cfg: UmapConfig,
    seed: int,
    pixel_feats: Mapping[str, np.ndarray] | None = None,
    descriptors: Mapping[PatchRef, np.ndarray] | None = None,
) -> list[PatchRef]:
    """As :func:`acquire_meal`, but the embedding is fitted on this step's informative patches only."""
    if n_informative < 3:
        raise AcquisitionError(f"informative_size must be >= 3 to fit an embedding, got {n_informative}")
    top = acquire_entropy(model, samples, pool, grid, n_informative, pixel_feats)
    if n >= len(top):
        return top
    if len(top) < 3:
        raise AcquisitionError(f"only {len(top)} informative patches left; need 3 to fit an embedding")
    step_cfg = replace(cfg, seed=fork_seed(seed, "meal-ft-umap"))
    _, points = fit_transform(_descriptors(samples, top, descriptors), step_cfg, top)
    chosen = kmeanspp_select(points, n, seed)
    return [p.patch for p in chosen.chosen]
