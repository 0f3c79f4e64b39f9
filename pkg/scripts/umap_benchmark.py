"""Embedding quality on separated Gaussian blobs: purity, objective drop, replay error, runtime.

    python scripts/umap_benchmark.py --seeds 5
"""

import argparse
import time

import numpy as np

from meal.bench import gaussian_clusters, kmeans_labels, purity
from meal.manifold import UmapConfig, fit, transform_array


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--d", type=int, default=50)
    ap.add_argument("--separation", type=float, default=10.0)
    ap.add_argument("--parallel", action="store_true")
    args = ap.parse_args(argv)

    fit(np.random.default_rng(0).normal(size=(20, 3)), UmapConfig(n_epochs=2, parallel=args.parallel))  # JIT warm-up
    print("seed  fit_s  purity  objective(start -> end)  replay median  q95   within 1.0")
    for seed in range(args.seeds):
        x, y = gaussian_clusters(args.n, args.d, 3, args.separation, seed)
        t = time.perf_counter()
        model = fit(x, UmapConfig(seed=seed, parallel=args.parallel))
        dt = time.perf_counter() - t
        p = purity(y, kmeans_labels(model.layout, 3, seed))
        err = np.linalg.norm(transform_array(model, x) - model.layout, axis=1)
        print(
            f"{seed:4d}  {dt:5.2f}  {p:6.3f}  {model.objective_initial:9.1f} -> {model.objective_final:9.1f}"
            f"  {np.median(err):13.3f}  {np.quantile(err, 0.95):.3f}  {np.mean(err <= 1.0):.3f}"
        )


if __name__ == "__main__":
    main()
