"""Small fixtures shared by the test suite and the benchmark scripts."""

from __future__ import annotations

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2


def gaussian_clusters(
    n: int = 300, d: int = 50, k: int = 3, separation: float = 10.0, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """``k`` unit-variance Gaussian blobs whose centres are pairwise ``separation`` apart.

    Centres sit on scaled basis vectors, so every pair is exactly
    ``separation`` standard deviations apart. Returns (points, labels).
    """
    if k > d:
        raise ValueError("need d >= k for equidistant centres")
    rng = np.random.default_rng(seed)
    centres = np.eye(k, d) * separation / np.sqrt(2.0)
    labels = np.arange(n) % k
    points = centres[labels] + rng.normal(size=(n, d))
    return points, labels


def kmeans_labels(points: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    """Lloyd k-means labels, best of ``restarts`` runs by inertia."""
    best, best_cost = None, np.inf
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        try:
            centroids, labels = kmeans2(points, k, minit="++", seed=rng, missing="raise")
        except ClusterError:
            # a restart that lost a cluster is simply discarded
            continue
        cost = ((points - centroids[labels]) ** 2).sum()
        if cost < best_cost:
            best, best_cost = labels, cost
    if best is None:
        raise ValueError("every k-means restart produced an empty cluster")
    return best


def purity(truth: np.ndarray, predicted: np.ndarray) -> float:
    """Fraction of points whose cluster's majority label matches their own."""
    total = 0
    for c in np.unique(predicted):
        total += np.bincount(truth[predicted == c]).max()
    return float(total / truth.size)
