"""Run the rare-shapes ordering benchmark and print the final-step comparison.

    python scripts/run_benchmark.py --config configs/benchmark.cfg --out results/benchmark.csv
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from meal.cli import thread_setting
from meal.config import load_config
from meal.harness import format_table, run_experiment, summarize, summary_csv, write_records


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="configs/benchmark.cfg")
    ap.add_argument("--out", default="results/benchmark.csv")
    ap.add_argument("--seeds", type=int, default=None, help="override: use seeds 0..N-1")
    args = ap.parse_args(argv)

    plan = load_config(args.config)
    threads = thread_setting()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    records = []
    t0 = time.perf_counter()
    for exp in plan.experiments:
        if args.seeds is not None:
            exp = replace(exp, seeds=tuple(range(args.seeds)))
        t = time.perf_counter()
        records.extend(run_experiment(exp, threads=threads))
        print(f"{exp.acquisition.strategy:8s} done in {time.perf_counter() - t:.1f}s", file=sys.stderr)
    write_records(out, records)
    rows = summarize(records)
    out.with_suffix(".curves.csv").write_text(summary_csv(rows))
    print(format_table(rows))

    final = {}
    for r in rows:
        final[r.strategy] = r.miou_mean
    print(f"total {time.perf_counter() - t0:.1f}s")
    if {"random", "entropy", "meal", "meal_ft"} <= final.keys():
        print(f"entropy - random = {final['entropy'] - final['random']:+.4f}")
        print(f"meal - random    = {final['meal'] - final['random']:+.4f}")
        print(f"meal_ft - meal   = {final['meal_ft'] - final['meal']:+.4f}")


if __name__ == "__main__":
    main()
