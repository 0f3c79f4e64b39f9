"""Measure per-class pixel frequencies of the synthetic generator against the nominal target.

    python scripts/calibrate_generator.py --seeds 10 --images 100
"""

import argparse

import numpy as np

from meal.data import SceneSpec, class_pixel_frequency, expected_class_frequency, generate_synthetic


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--images", type=int, default=100)
    ap.add_argument("--rare-weight", type=float, default=SceneSpec.rare_weight)
    args = ap.parse_args(argv)

    spec = SceneSpec(rare_weight=args.rare_weight)
    target = expected_class_frequency(spec)
    print("target  ", np.array2string(target, precision=4))
    ratios = []
    for seed in range(args.seeds):
        freq = class_pixel_frequency(generate_synthetic(seed, args.images, spec), spec.n_classes)
        ratios.append(freq[-1] / target[-1])
        print(f"seed {seed:2d}", np.array2string(freq, precision=4), f"rare/target {ratios[-1]:.3f}")
    ratios = np.array(ratios)
    print(f"rare/target: mean {ratios.mean():.3f}, min {ratios.min():.3f}, max {ratios.max():.3f}")


if __name__ == "__main__":
    main()
