"""Command-line front end: ``meal synth``, ``meal run`` and ``meal report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
``MEAL_THREADS`` caps worker parallelism; 0 or unset selects the
deterministic single-threaded mode.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"meal: error: {msg}", file=sys.stderr)


def thread_setting(environ=None) -> int:
    env = os.environ if environ is None else environ
    raw = env.get("MEAL_THREADS", "").strip()
    if not raw:
        return 0
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MEAL_THREADS must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise UsageError(f"MEAL_THREADS must be a non-negative integer, got {n}")
    return n


def cmd_synth(args) -> int:
    from meal.data import DatasetError, SceneSpec, generate_synthetic, write_dataset

    spec = replace(SceneSpec(), height=args.height, width=args.width, n_classes=args.classes)
    if args.rare_weight is not None:
        spec = replace(spec, rare_weight=args.rare_weight)
    if args.images < 1:
        raise UsageError(f"--images must be >= 1, got {args.images}")
    try:
        spec.validate()
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    samples = generate_synthetic(args.seed, args.images, spec)
    manifest = write_dataset(samples, args.out)
    print(f"wrote {len(samples)} images, {len(samples)} label maps and manifest {manifest}")
    return EXIT_OK


def cmd_run(args) -> int:
    from meal.config import ConfigError, load_config
    from meal.harness import records_to_csv, run_experiment

    threads = thread_setting()
    try:
        plan = load_config(args.config)
    except ConfigError as exc:
        raise UsageError(f"config {exc}") from None
    out = args.out or plan.values.get("output")
    if out is None:
        raise UsageError("no output path: pass --out or set 'output' in the config")
    if threads > 0:
        import numba

        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))

    def progress(line: str) -> None:
        print(line, file=sys.stderr, flush=True)

    records = []
    for exp in plan.experiments:
        records.extend(run_experiment(replace(exp, output=None), threads=threads, progress=progress))
    Path(out).write_text(records_to_csv(records))
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from meal.harness import HarnessError, format_table, read_records, summarize, summary_csv

    records = read_records(args.inp)
    if not records:
        raise HarnessError(f"{args.inp}: no records")
    rows = summarize(records)
    table = format_table(rows)
    out = Path(args.out)
    curves = out.with_suffix(".curves.csv")
    out.write_text(table)
    curves.write_text(summary_csv(rows))
    sys.stdout.write(table)
    print(f"wrote {out} and {curves}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meal", description="Patch-wise active learning experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--images", type=int, default=63)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=48)
    s.add_argument("--classes", type=int, default=5)
    s.add_argument("--rare-weight", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarise a results CSV")
    rep.add_argument("--in", dest="inp", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
