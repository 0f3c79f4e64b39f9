"""The active-learning loop, mIoU evaluation and result tables."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from meal.data import (
    IGNORE_LABEL,
    ImageSample,
    PatchGrid,
    Pool,
    SceneSpec,
    generate_synthetic,
    load_dataset,
    reveal_labels,
    tile,
)
from meal.manifold import UmapConfig, fit
from meal.model import TrainConfig, descriptor_matrix, pixel_features, train_from_scratch
from meal.rng import fork_seed, stream
from meal.strategies import (
    AcquisitionConfig,
    acquire_entropy,
    acquire_meal,
    acquire_meal_ft,
    acquire_random,
)

log = logging.getLogger(__name__)

CSV_HEADER = ["run_id", "strategy", "seed", "step", "labeled_patches", "miou", "wall_ms"]


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """``source`` is ``"synthetic"`` or a manifest path."""

    source: str = "synthetic"
    n_images: int = 63
    seed: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)
    n_classes: int | None = None
    val_fraction: float = 0.2

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise HarnessError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.source == "synthetic" and self.n_images < 2:
            raise HarnessError("need at least 2 synthetic images (train + validation)")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    grid: PatchGrid = field(default_factory=PatchGrid)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    umap: UmapConfig = field(default_factory=UmapConfig)
    seeds: tuple[int, ...] = (0, 1, 2)
    output: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise HarnessError("seeds must be non-empty")


@dataclass(frozen=True)
class StepRecord:
    run_id: str
    strategy: str
    seed: int
    step: int
    labeled_patches: int
    miou: float
    wall_ms: int
    exhausted: bool = False

    def row(self) -> list[str]:
        return [
            self.run_id,
            self.strategy,
            str(self.seed),
            str(self.step),
            str(self.labeled_patches),
            f"{self.miou:.6f}",
            str(self.wall_ms),
        ]


# ---------------------------------------------------------------------------
# evaluation


def confusion(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> np.ndarray:
    if pred.shape != gt.shape:
        raise HarnessError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    valid = gt != IGNORE_LABEL
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    return np.bincount(g * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def iou_per_class(cm: np.ndarray) -> np.ndarray:
    """IoU per class, NaN where the class never occurs in either map."""
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / denom, np.nan)


def mean_iou(pred_labels: Sequence[np.ndarray], gt_labels: Sequence[np.ndarray], n_classes: int) -> float:
    """Dataset-level mIoU; classes absent from both prediction and truth are skipped."""
    if len(pred_labels) != len(gt_labels):
        raise HarnessError("prediction and ground-truth lists differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, g in zip(pred_labels, gt_labels):
        cm += confusion(np.asarray(p), np.asarray(g), n_classes)
    ious = iou_per_class(cm)
    if np.all(np.isnan(ious)):
        raise HarnessError("no valid class present in prediction or ground truth")
    return float(np.nanmean(ious))


def evaluate(model, samples: Sequence[ImageSample], n_classes: int, pixel_feats=None) -> float:
    preds, gts = [], []
    for s in samples:
        feats = pixel_feats[s.id] if pixel_feats else pixel_features(s)
        preds.append(model.probs_from_features(feats).argmax(axis=-1))
        gts.append(s.label_map)
    return mean_iou(preds, gts, n_classes)


# ---------------------------------------------------------------------------
# the loop


def load_samples(cfg: DataConfig, grid: PatchGrid) -> tuple[list[ImageSample], int]:
    """Images and class count for ``cfg``."""
    if cfg.source == "synthetic":
        scene = replace(cfg.scene, grid_rows=grid.rows, grid_cols=grid.cols)
        return generate_synthetic(cfg.seed, cfg.n_images, scene), scene.n_classes
    samples, _ = load_dataset(cfg.source, grid, cfg.n_classes)
    n_classes = cfg.n_classes
    if n_classes is None:
        n_classes = 1 + max(int(s.label_map[s.label_map != IGNORE_LABEL].max(initial=0)) for s in samples)
    if len(samples) < 2:
        raise HarnessError("need at least 2 images (train + validation)")
    return samples, n_classes


def split_validation(n_images: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    n_val = min(n_images - 1, max(1, int(round(fraction * n_images))))
    perm = stream(seed, "val-split").permutation(n_images)
    return sorted(int(i) for i in perm[n_val:]), sorted(int(i) for i in perm[:n_val])


@dataclass
class _Context:
    cfg: ExperimentConfig
    samples: list[ImageSample]
    n_classes: int
    pixel_feats: dict
    descriptors: dict


def _prepare(cfg: ExperimentConfig) -> _Context:
    samples, n_classes = load_samples(cfg.data, cfg.grid)
    feats = {s.id: pixel_features(s) for s in samples}
    patches = [p for s in samples for p in tile(s, cfg.grid)]
    desc = dict(zip(patches, descriptor_matrix(samples, patches)))
    return _Context(cfg, samples, n_classes, feats, desc)


def _run_seed(ctx: _Context, seed: int, deterministic: bool, progress: Callable[[str], None] | None):
    cfg = ctx.cfg
    acq = cfg.acquisition
    strategy = acq.strategy
    run_id = f"{strategy}-seed{seed}"
    train_idx, val_idx = split_validation(len(ctx.samples), cfg.data.val_fraction, seed)
    train = [ctx.samples[i] for i in train_idx]
    val = [ctx.samples[i] for i in val_idx]
    grid = cfg.grid.for_shape(train[0].h, train[0].w)

    pool = Pool.from_patches(p for s in train for p in tile(s, grid))
    total = pool.total
    if acq.init_patches > total and strategy != "full":
        raise HarnessError(f"init_patches ({acq.init_patches}) exceeds the {total} available patches")

    records: list[StepRecord] = []

    def emit(step: int, labeled: int, miou: float, started: float, exhausted: bool = False):
        wall = 0 if deterministic else int(round((time.perf_counter() - started) * 1000))
        rec = StepRecord(run_id, strategy, seed, step, labeled, miou, wall, exhausted)
        records.append(rec)
        if progress:
            progress(f"{run_id} step {step} labeled {labeled} miou {miou:.4f}")

    def train_eval(step: int) -> tuple:
        tcfg = replace(cfg.train, seed=fork_seed(seed, f"train-step-{step}"))
        model = train_from_scratch(train, pool, tcfg, ctx.n_classes, ctx.pixel_feats)
        return model, evaluate(model, val, ctx.n_classes, ctx.pixel_feats)

    if strategy == "full":
        started = time.perf_counter()
        pool = reveal_labels(pool, pool.unlabeled)
        _, miou = train_eval(0)
        emit(0, len(pool.labeled), miou, started)
        return records

    init_rng = stream(seed, "init-pool")
    candidates = pool.sorted_unlabeled()
    init = [candidates[i] for i in init_rng.choice(len(candidates), size=acq.init_patches, replace=False)]
    pool = reveal_labels(pool, init)
    queried = set(init)

    phi = None
    if strategy == "meal":
        # Step 0 sees every pool patch, labeled or not
        ordered = sorted(pool.labeled | pool.unlabeled)
        matrix = np.stack([ctx.descriptors[p] for p in ordered])
        phi = fit(matrix, replace(cfg.umap, seed=fork_seed(seed, "umap-step0")))

    for step in range(acq.steps + 1):
        started = time.perf_counter()
        model, miou = train_eval(step)
        labeled = len(pool.labeled)
        if step == acq.steps:
            emit(step, labeled, miou, started)
            break
        if not pool.unlabeled:
            log.warning("%s: pool exhausted after step %d", run_id, step)
            emit(step, labeled, miou, started, exhausted=True)
            break
        n = acq.query_size
        if strategy == "random":
            query = acquire_random(pool, n, fork_seed(seed, f"random-step-{step}"))
        elif strategy == "entropy":
            query = acquire_entropy(model, train, pool, grid, n, ctx.pixel_feats)
        elif strategy == "meal":
            query = acquire_meal(
                model, train, pool, grid, phi, n, acq.informative_size,
                fork_seed(seed, f"kmeanspp-step-{step}"), ctx.pixel_feats, ctx.descriptors,
            )
        else:
            query = acquire_meal_ft(
                model, train, pool, grid, n, acq.informative_size, cfg.umap,
                fork_seed(seed, f"kmeanspp-step-{step}"), ctx.pixel_feats, ctx.descriptors,
            )
        if queried.intersection(query):
            raise HarnessError(f"{run_id}: patch queried twice at step {step}")
        queried.update(query)
        pool = reveal_labels(pool, query)
        assert pool.total == total
        emit(step, labeled, miou, started)
    return records


def _run_seed_job(args):
    cfg, seed = args
    return _run_seed(_prepare(cfg), seed, False, None)


def run_experiment(
    cfg: ExperimentConfig,
    threads: int = 0,
    progress: Callable[[str], None] | None = None,
) -> list[StepRecord]:
    """Run every seed of ``cfg``; records come back ordered by (seed order, step).

    ``threads == 0`` is the deterministic mode: seeds run in order and
    ``wall_ms`` is written as 0 so that repeated runs give identical bytes.
    With ``threads > 0`` seeds run in worker processes and real timings are kept.
    """
    if threads > 0 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_run_seed_job, [(cfg, s) for s in cfg.seeds]))
        records = [r for chunk in chunks for r in chunk]
        if progress:
            for r in records:
                progress(f"{r.run_id} step {r.step} labeled {r.labeled_patches} miou {r.miou:.4f}")
    else:
        ctx = _prepare(cfg)
        records = []
        for seed in cfg.seeds:
            records.extend(_run_seed(ctx, seed, threads <= 0, progress))
    if cfg.output:
        write_records(cfg.output, records)
    return records


# ---------------------------------------------------------------------------
# persistence and summaries


def records_to_csv(records: Sequence[StepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def write_records(path, records: Sequence[StepRecord]) -> None:
    Path(path).write_text(records_to_csv(records))


def read_records(path) -> list[StepRecord]:
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise HarnessError(f"{path}: header must be exactly {','.join(CSV_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise HarnessError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            out.append(
                StepRecord(row[0], row[1], int(row[2]), int(row[3]), int(row[4]), float(row[5]), int(row[6]))
            )
        except ValueError as exc:
            raise HarnessError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    step: int
    labeled_patches: float
    n_seeds: int
    miou_mean: float
    miou_std: float


def summarize(records: Sequence[StepRecord]) -> list[SummaryRow]:
    """Mean and sample std of mIoU across seeds for each (strategy, step)."""
    groups: dict[tuple[str, int], list[StepRecord]] = {}
    order: list[str] = []
    for r in records:
        if r.strategy not in order:
            order.append(r.strategy)
        groups.setdefault((r.strategy, r.step), []).append(r)
    rows = []
    for strategy in order:
        for step in sorted(s for (st, s) in groups if st == strategy):
            g = groups[(strategy, step)]
            m = np.array([r.miou for r in g])
            std = float(m.std(ddof=1)) if m.size > 1 else 0.0
            labeled = float(np.mean([r.labeled_patches for r in g]))
            rows.append(SummaryRow(strategy, step, labeled, m.size, float(m.mean()), std))
    return rows


def format_table(rows: Sequence[SummaryRow]) -> str:
    lines = []
    current = None
    for r in rows:
        if r.strategy != current:
            if current is not None:
                lines.append("")
            current = r.strategy
            lines.append(f"strategy: {r.strategy}")
            lines.append(f"{'step':>5} {'labeled':>8} {'seeds':>5} {'miou_mean':>10} {'miou_std':>9}")
        lines.append(
            f"{r.step:>5} {r.labeled_patches:>8.1f} {r.n_seeds:>5} {r.miou_mean:>10.4f} {r.miou_std:>9.4f}"
        )
    return "\n".join(lines) + "\n"


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "step", "labeled_patches", "n_seeds", "miou_mean", "miou_std"])
    for r in rows:
        w.writerow([r.strategy, r.step, f"{r.labeled_patches:g}", r.n_seeds, f"{r.miou_mean:.6f}", f"{r.miou_std:.6f}"])
    return buf.getvalue()
