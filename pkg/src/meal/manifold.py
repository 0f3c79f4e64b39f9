"""UMAP-style manifold embedding written from scratch.

Exact kNN graph, per-point local scaling, fuzzy-union symmetrisation and a
stochastic edge-sampling layout optimiser with negative sampling. The serial
optimiser is bitwise reproducible for a given seed; ``parallel=True`` runs the
edge loop with ``numba.prange`` and gives that up.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy import sparse
from scipy.optimize import curve_fit

from meal.data import PatchRef
from meal.rng import fork_seed

SIGMA_TOLERANCE = 1e-5
PERSIST_MAGIC = b"MPHI"
PERSIST_VERSION = 1


class ManifoldError(ValueError):
    pass


@dataclass(frozen=True)
class UmapConfig:
    n_neighbors: int = 15
    out_dim: int = 2
    min_dist: float = 0.1
    n_epochs: int = 200
    negative_samples: int = 5
    learning_rate: float = 1.0
    seed: int = 0
    parallel: bool = False
    spread: float = 1.0

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ManifoldError(f"n_neighbors must be >= 2, got {self.n_neighbors}")
        if self.out_dim < 1:
            raise ManifoldError(f"out_dim must be >= 1, got {self.out_dim}")
        if not self.min_dist > 0:
            raise ManifoldError(f"min_dist must be > 0, got {self.min_dist}")
        if self.n_epochs < 1 or self.negative_samples < 0 or not self.learning_rate > 0:
            raise ManifoldError("n_epochs >= 1, negative_samples >= 0 and learning_rate > 0 required")


@dataclass(frozen=True, eq=False)
class EmbeddingPoint:
    values: np.ndarray
    patch: PatchRef | None = None


@dataclass(eq=False)
class UmapModel:
    train_features: np.ndarray  # (n, d)
    knn_indices: np.ndarray  # (n, k)
    knn_dists: np.ndarray  # (n, k)
    fuzzy_weights: sparse.csr_matrix  # (n, n), symmetric
    layout: np.ndarray  # (n, d')
    config: UmapConfig
    a: float
    b: float
    objective_initial: float = float("nan")
    objective_final: float = float("nan")

    @property
    def n(self) -> int:
        return self.train_features.shape[0]

    @property
    def dim(self) -> int:
        return self.train_features.shape[1]

    def embed(self, features: np.ndarray) -> np.ndarray:
        return transform_array(self, features)


# ---------------------------------------------------------------------------
# graph construction


def exact_knn(
    query: np.ndarray, data: np.ndarray, k: int, exclude_self: bool, block: int = 1024
) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force Euclidean kNN; ties resolve to the lower index."""
    m, n = query.shape[0], data.shape[0]
    # take a few spare candidates so near-ties at the k-th slot survive the
    # cancellation error of the expanded squared distance
    kk = min(n, 2 * k + 8)
    idx = np.empty((m, kk), dtype=np.int64)
    dist = np.empty((m, kk), dtype=np.float64)
    data_sq = np.einsum("ij,ij->i", data, data)
    for start in range(0, m, block):
        q = query[start : start + block]
        d2 = np.einsum("ij,ij->i", q, q)[:, None] + data_sq[None, :] - 2.0 * (q @ data.T)
        np.maximum(d2, 0.0, out=d2)
        if exclude_self:
            rows = np.arange(q.shape[0])
            d2[rows, start + rows] = np.inf
        if kk < n:
            order = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
        else:
            order = np.broadcast_to(np.arange(n), d2.shape).copy()
        idx[start : start + q.shape[0]] = order
        # recompute the retained distances directly so duplicates give exactly 0
        diff = q[:, None, :] - data[order]
        exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        if exclude_self:
            exact[order == (start + np.arange(q.shape[0]))[:, None]] = np.inf
        dist[start : start + q.shape[0]] = exact
    order = np.lexsort((idx, dist), axis=-1)[:, :k]
    idx = np.take_along_axis(idx, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    return idx, dist


def calibration_sum(dists: np.ndarray, rho: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None]).sum(axis=1)


def smooth_knn_dist(dists: np.ndarray, n_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (sigma, rho): rho is the nearest distance, sigma solves
    sum_j exp(-max(0, d_j - rho) / sigma) = log2(k) by bisection.

    Rows whose neighbours tie at distance rho so often that the sum can never
    come down to the target keep the smallest sigma found.
    """
    m, k = dists.shape
    target = np.log2(k)
    rho = dists[:, 0].copy()
    lo = np.zeros(m)
    hi = np.full(m, np.inf)
    mid = np.ones(m)
    done = np.zeros(m, dtype=bool)
    for _ in range(n_iter):
        total = calibration_sum(dists, rho, mid)
        done |= np.abs(total - target) < SIGMA_TOLERANCE * 0.1
        if done.all():
            break
        upd = ~done
        too_big = upd & (total > target)
        too_small = upd & ~too_big
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_small, mid, lo)
        mid = np.where(
            upd,
            np.where(np.isinf(hi), mid * 2.0, (lo + hi) / 2.0),
            mid,
        )
    # a zero sigma would divide by zero downstream
    mid = np.maximum(mid, np.finfo(np.float64).tiny)
    return mid, rho


def membership_weights(dists: np.ndarray, sigma: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None])


def fuzzy_union(directed: sparse.spmatrix) -> sparse.csr_matrix:
    """a + b - a*b of a directed membership matrix and its transpose."""
    a = directed.tocsr()
    at = a.T.tocsr()
    out = (a + at - a.multiply(at)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def find_ab_params(spread: float, min_dist: float) -> tuple[float, float]:
    """Least-squares fit of 1 / (1 + a x^(2b)) to the offset exponential membership curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


# ---------------------------------------------------------------------------
# layout optimisation


def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


_clip_jit = numba.njit(_clip, cache=True)


def _optimize_impl(
    head_emb,
    tail_emb,
    head,
    tail,
    epochs_per_sample,
    a,
    b,
    initial_alpha,
    n_epochs,
    negative_rate,
    seed,
    move_other,
):
    np.random.seed(seed)
    n_edges = head.shape[0]
    n_vertices = tail_emb.shape[0]
    dim = head_emb.shape[1]
    epochs_per_negative_sample = epochs_per_sample / max(negative_rate, 1e-12)
    epoch_of_next_negative_sample = epochs_per_negative_sample.copy()
    epoch_of_next_sample = epochs_per_sample.copy()
    for n in range(n_epochs):
        alpha = initial_alpha * (1.0 - n / n_epochs)
        for i in numba.prange(n_edges):
            if epochs_per_sample[i] <= 0.0 or epoch_of_next_sample[i] > n:
                continue
            j = head[i]
            k = tail[i]
            dist_sq = 0.0
            for d in range(dim):
                diff = head_emb[j, d] - tail_emb[k, d]
                dist_sq += diff * diff
            if dist_sq > 0.0:
                coeff = -2.0 * a * b * dist_sq ** (b - 1.0) / (a * dist_sq**b + 1.0)
            else:
                coeff = 0.0
            for d in range(dim):
                grad = _clip_jit(coeff * (head_emb[j, d] - tail_emb[k, d]))
                head_emb[j, d] += grad * alpha
                if move_other:
                    tail_emb[k, d] -= grad * alpha
            epoch_of_next_sample[i] += epochs_per_sample[i]

            if negative_rate <= 0:
                continue
            n_neg = int((n - epoch_of_next_negative_sample[i]) / epochs_per_negative_sample[i])
            for _ in range(n_neg):
                k = np.random.randint(0, n_vertices)
                if move_other and k == j:
                    continue
                dist_sq = 0.0
                for d in range(dim):
                    diff = head_emb[j, d] - tail_emb[k, d]
                    dist_sq += diff * diff
                if dist_sq > 0.0:
                    coeff = 2.0 * b / ((0.001 + dist_sq) * (a * dist_sq**b + 1.0))
                    for d in range(dim):
                        grad = _clip_jit(coeff * (head_emb[j, d] - tail_emb[k, d]))
                        head_emb[j, d] += grad * alpha
                else:
                    for d in range(dim):
                        head_emb[j, d] += 4.0 * alpha
            epoch_of_next_negative_sample[i] += n_neg * epochs_per_negative_sample[i]


_optimize_serial = numba.njit(cache=True)(_optimize_impl)
_optimize_parallel = numba.njit(cache=True, parallel=True)(_optimize_impl)


def make_epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    """Edges are sampled in proportion to weight; edges below max/n_epochs never are."""
    result = -np.ones(weights.shape[0], dtype=np.float64)
    n_samples = n_epochs * (weights / weights.max())
    keep = n_samples >= 1.0
    result[keep] = n_epochs / n_samples[keep]
    return result


def _q(dist_sq: np.ndarray, a: float, b: float) -> np.ndarray:
    return 1.0 / (1.0 + a * dist_sq**b)


def layout_objective(
    layout: np.ndarray,
    head: np.ndarray,
    tail: np.ndarray,
    weights: np.ndarray,
    neg_head: np.ndarray,
    neg_tail: np.ndarray,
    neg_weights: np.ndarray,
    a: float,
    b: float,
) -> float:
    """Cross-entropy surrogate minimised by the edge sampler.

    Each retained edge contributes ``-w log q`` for its endpoints plus
    ``-w log(1 - q)`` for each of its fixed negative partners, mirroring how
    edges are sampled in proportion to weight and draw negatives per sample.
    ``neg_weights`` carries the owning edge's weight for each negative pair.
    """
    eps = 1e-12
    d_pos = ((layout[head] - layout[tail]) ** 2).sum(axis=1)
    d_neg = ((layout[neg_head] - layout[neg_tail]) ** 2).sum(axis=1)
    attract = -(weights * np.log(np.maximum(_q(d_pos, a, b), eps))).sum()
    repel = -(neg_weights * np.log(np.maximum(1.0 - _q(d_neg, a, b), eps))).sum()
    return float(attract + repel)


def _run_optimizer(parallel: bool, *args) -> None:
    (_optimize_parallel if parallel else _optimize_serial)(*args)


def fit(features: np.ndarray, cfg: UmapConfig | None = None) -> UmapModel:
    cfg = cfg or UmapConfig()
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ManifoldError(f"features must be a 2-D matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 3:
        raise ManifoldError(f"need at least 3 points to fit, got {n}")
    if not np.all(np.isfinite(x)):
        raise ManifoldError("features contain non-finite values")
    k = min(cfg.n_neighbors, n - 1)

    knn_idx, knn_dist = exact_knn(x, x, k, exclude_self=True)
    sigma, rho = smooth_knn_dist(knn_dist)
    vals = membership_weights(knn_dist, sigma, rho)
    rows = np.repeat(np.arange(n), k)
    directed = sparse.coo_matrix((vals.ravel(), (rows, knn_idx.ravel())), shape=(n, n))
    graph = fuzzy_union(directed)

    a, b = find_ab_params(cfg.spread, cfg.min_dist)
    coo = graph.tocoo()
    head = coo.row.astype(np.int64)
    tail = coo.col.astype(np.int64)
    weights = coo.data.astype(np.float64)
    eps_sample = make_epochs_per_sample(weights, cfg.n_epochs)

    rng = np.random.default_rng(cfg.seed)
    layout = rng.uniform(-10.0, 10.0, size=(n, cfg.out_dim))

    neg_rng = np.random.default_rng(fork_seed(cfg.seed, "umap-objective"))
    retained = eps_sample > 0
    n_neg = max(1, cfg.negative_samples)
    neg_head = np.repeat(head[retained], n_neg)
    neg_tail = neg_rng.integers(0, n, size=neg_head.size)
    neg_w = np.repeat(weights[retained], n_neg)
    objective_args = (head[retained], tail[retained], weights[retained], neg_head, neg_tail, neg_w, a, b)
    obj0 = layout_objective(layout, *objective_args)

    _run_optimizer(
        cfg.parallel,
        layout,
        layout,
        head,
        tail,
        eps_sample,
        a,
        b,
        cfg.learning_rate,
        cfg.n_epochs,
        float(cfg.negative_samples),
        fork_seed(cfg.seed, "umap-layout"),
        True,
    )
    obj1 = layout_objective(layout, *objective_args)
    if not np.all(np.isfinite(layout)):
        raise ManifoldError("layout diverged to non-finite values")

    return UmapModel(
        train_features=x,
        knn_indices=knn_idx,
        knn_dists=knn_dist,
        fuzzy_weights=graph,
        layout=layout,
        config=cfg,
        a=a,
        b=b,
        objective_initial=obj0,
        objective_final=obj1,
    )


def transform_array(model: UmapModel, features: np.ndarray) -> np.ndarray:
    """Embed new rows against the frozen training layout."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        return np.zeros((0, model.layout.shape[1]))
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ManifoldError(f"expected feature dimension {model.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ManifoldError("features contain non-finite values")
    cfg = model.config
    m = x.shape[0]
    k = min(cfg.n_neighbors, model.n)
    idx, dist = exact_knn(np.ascontiguousarray(x), model.train_features, k, exclude_self=False)
    sigma, rho = smooth_knn_dist(dist)
    w = membership_weights(dist, sigma, rho)
    emb = (w[:, :, None] * model.layout[idx]).sum(axis=1) / w.sum(axis=1, keepdims=True)

    n_epochs = max(1, cfg.n_epochs // 4)
    head = np.repeat(np.arange(m), k).astype(np.int64)
    tail = idx.ravel().astype(np.int64)
    eps_sample = make_epochs_per_sample(w.ravel(), n_epochs)
    frozen = model.layout.copy()
    _run_optimizer(
        cfg.parallel,
        emb,
        frozen,
        head,
        tail,
        eps_sample,
        model.a,
        model.b,
        cfg.learning_rate / 4.0,
        n_epochs,
        # fit pulls each vertex along both directions of a symmetric edge but
        # repels it once; halving the rate keeps that balance for a lone point
        cfg.negative_samples / 2.0,
        fork_seed(cfg.seed, "umap-transform"),
        False,
    )
    return emb


def transform(
    model: UmapModel, features: np.ndarray, patches: Sequence[PatchRef] | None = None
) -> list[EmbeddingPoint]:
    emb = transform_array(model, features)
    if patches is None:
        patches = [None] * emb.shape[0]
    elif len(patches) != emb.shape[0]:
        raise ManifoldError(f"{len(patches)} patches for {emb.shape[0]} feature rows")
    return [EmbeddingPoint(row, p) for row, p in zip(emb, patches)]


def fit_transform(
    features: np.ndarray, cfg: UmapConfig | None = None, patches: Sequence[PatchRef] | None = None
) -> tuple[UmapModel, list[EmbeddingPoint]]:
    model = fit(features, cfg)
    if patches is None:
        patches = [None] * model.n
    return model, [EmbeddingPoint(row.copy(), p) for row, p in zip(model.layout, patches)]


# ---------------------------------------------------------------------------
# persistence

_HEADER = struct.Struct("<4sIIIII")  # magic, version, n, d, d', k
_CONFIG = struct.Struct("<IIIIqddddd?")


def save_model(model: UmapModel, path) -> None:
    cfg = model.config
    n, d = model.train_features.shape
    k = model.knn_indices.shape[1]
    coo = model.fuzzy_weights.tocoo()
    parts = [
        _HEADER.pack(PERSIST_MAGIC, PERSIST_VERSION, n, d, cfg.out_dim, k),
        _CONFIG.pack(
            cfg.n_neighbors,
            cfg.out_dim,
            cfg.n_epochs,
            cfg.negative_samples,
            cfg.seed,
            cfg.min_dist,
            cfg.learning_rate,
            cfg.spread,
            model.a,
            model.b,
            cfg.parallel,
        ),
        struct.pack("<ddI", model.objective_initial, model.objective_final, coo.nnz),
        model.layout.astype("<f8").tobytes(),
        model.knn_indices.astype("<i8").tobytes(),
        model.knn_dists.astype("<f8").tobytes(),
        coo.row.astype("<i8").tobytes(),
        coo.col.astype("<i8").tobytes(),
        coo.data.astype("<f8").tobytes(),
        model.train_features.astype("<f8").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> UmapModel:
    buf = Path(path).read_bytes()
    magic, version, n, d, dp, k = _HEADER.unpack_from(buf, 0)
    if magic != PERSIST_MAGIC or version != PERSIST_VERSION:
        raise ManifoldError(f"not a manifold file (magic {magic!r}, version {version})")
    pos = _HEADER.size
    (nn, od, ne, ns, seed, md, lr, spread, a, b, par) = _CONFIG.unpack_from(buf, pos)
    pos += _CONFIG.size
    obj0, obj1, nnz = struct.unpack_from("<ddI", buf, pos)
    pos += struct.calcsize("<ddI")

    def take(dtype, count, shape):
        nonlocal pos
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
        pos += arr.nbytes
        return arr

    try:
        layout = take("<f8", n * dp, (n, dp))
        knn_idx = take("<i8", n * k, (n, k))
        knn_dist = take("<f8", n * k, (n, k))
        rows = take("<i8", nnz, (nnz,))
        cols = take("<i8", nnz, (nnz,))
        vals = take("<f8", nnz, (nnz,))
        feats = take("<f8", n * d, (n, d))
    except ValueError:
        raise ManifoldError("manifold file truncated") from None
    cfg = UmapConfig(
        n_neighbors=nn,
        out_dim=od,
        min_dist=md,
        n_epochs=ne,
        negative_samples=ns,
        learning_rate=lr,
        seed=seed,
        parallel=par,
        spread=spread,
    )
    graph = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    graph.sort_indices()
    return UmapModel(feats, knn_idx, knn_dist, graph, layout, cfg, a, b, obj0, obj1)


def config_dict(cfg: UmapConfig) -> dict:
    return asdict(cfg)


def with_seed(cfg: UmapConfig, seed: int) -> UmapConfig:
    return replace(cfg, seed=seed)
