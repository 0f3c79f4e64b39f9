"""K-Means++ (D^2) seeding used as a diversity selector.

Only the seeding pass runs: the chosen seeds are themselves the selected
samples, so every pick is an actual patch that can be labeled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from meal.manifold import EmbeddingPoint


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SeedSelection:
    chosen: list
    indices: list[int]
    rng_seed: int


def kmeanspp_indices(points: np.ndarray, n_select: int, rng: np.random.Generator) -> list[int]:
    """Indices of ``n_select`` D^2-sampled seeds.

    Draws use inverse-CDF sampling over the fixed point order, one uniform
    variate per draw, so rescaling all coordinates does not change the result.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if m == 0:
        raise SelectionError("cannot select from an empty point set")
    if n_select < 1:
        raise SelectionError(f"n_select must be >= 1, got {n_select}")
    if n_select >= m:
        return list(range(m))

    chosen = [int(rng.integers(m))]
    is_chosen = np.zeros(m, dtype=bool)
    is_chosen[chosen[0]] = True
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < n_select:
        u = rng.random()
        weights = np.where(is_chosen, 0.0, d2)
        total = weights.sum()
        if total > 0:
            cdf = np.cumsum(weights)
            nxt = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
            nxt = min(nxt, m - 1)
            # guard against landing on a zero-weight slot through rounding
            while weights[nxt] == 0.0:
                nxt -= 1
        else:
            remaining = np.flatnonzero(~is_chosen)
            nxt = int(remaining[min(int(u * remaining.size), remaining.size - 1)])
        chosen.append(nxt)
        is_chosen[nxt] = True
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return chosen


def kmeanspp_select(points: Sequence[EmbeddingPoint], n_select: int, seed: int) -> SeedSelection:
    if len(points) == 0:
        raise SelectionError("cannot select from an empty point set")
    coords = np.stack([np.atleast_1d(np.asarray(p.values, dtype=np.float64)) for p in points])
    idx = kmeanspp_indices(coords, n_select, np.random.default_rng(seed))
    return SeedSelection([points[i] for i in idx], idx, seed)
