"""Command-line front end: run a scenario file through the staged pipeline.

Usage::

    radnerlab --scenario scenarios/benchmark.toml --out runs/benchmark
    radnerlab --scenario s.toml --command check --seed 7 --paths 50000
    radnerlab --scenario s.toml --grid 100x200

``--grid`` takes the number of time levels followed by per-axis spatial
point counts, separated by ``x`` (one spatial count is broadcast to every
axis).  ``RADNERLAB_THREADS`` caps the BLAS thread pools before the
numerical stack is imported.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS",
                "NUMEXPR_NUM_THREADS")


def _apply_thread_cap():
    threads = os.environ.get("RADNERLAB_THREADS")
    if threads:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, threads)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="radnerlab",
        description="Solve and verify a dynamic exchange-economy scenario.")
    parser.add_argument("--scenario", required=True,
                        help="path to a scenario TOML file")
    parser.add_argument("--out", default=None,
                        help="artifact directory (default runs/<name>)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    parser.add_argument("--paths", type=int, default=None,
                        help="override the Monte Carlo path count")
    parser.add_argument("--grid", default=None, metavar="NTxNX[xNY...]",
                        help="override time/space grid sizes")
    parser.add_argument("--command", default="all",
                        choices=("validate", "solve", "price", "check",
                                 "report", "all"),
                        help="last pipeline stage to execute")
    return parser


def _parse_grid(text):
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        parts = []
    if len(parts) < 2 or any(p < 2 for p in parts):
        raise SystemExit(f"--grid expects NTxNX[xNY...], got '{text}'")
    return parts[0], parts[1:]


def _apply_overrides(tree, args):
    if args.seed is not None:
        tree["seed"] = args.seed
    if args.paths is not None:
        tree.setdefault("mc", {})["n_paths"] = args.paths
    if args.grid is not None:
        n_times, n_space = _parse_grid(args.grid)
        gtab = tree.setdefault("grid", {})
        gtab["n_times"] = n_times
        dim = int(tree.get("diffusion", {}).get("dimension", 1))
        if len(n_space) == 1:
            n_space = n_space * dim
        if len(n_space) != dim:
            raise SystemExit(
                f"--grid lists {len(n_space)} spatial sizes for "
                f"a {dim}-dimensional state")
        gtab["n_space"] = n_space
    return tree


def main(argv=None):
    _apply_thread_cap()
    args = build_parser().parse_args(argv)

    from .errors import LabError
    from .runner import run_scenario
    from .scenario import scenario_from_tree

    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(args.scenario, "rb") as fh:
            tree = tomllib.load(fh)
        scenario = scenario_from_tree(_apply_overrides(tree, args))
    except (OSError, tomllib.TOMLDecodeError, LabError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    outdir = args.out or os.path.join("runs", scenario.name)
    try:
        outcome = run_scenario(scenario, outdir, args.command)
    except LabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    for stage in outcome.stages:
        mark = "ok" if stage.passed else "FAIL"
        note = stage.detail.get("error", "")
        print(f"[{mark:>4}] {stage.name}" + (f"  {note}" if note else ""))
    print(f"artifacts: {outdir}")
    return 0 if outcome.passed else 1


if __name__ == "__main__":
    sys.exit(main())
