"""Shared fixtures.

Thread caps are pinned to 1 before numpy is imported anywhere so that
timing-sensitive tests and bitwise-determinism tests run single-threaded
regardless of the host BLAS.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import copy
import pathlib

import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

ROOT = pathlib.Path(__file__).resolve().parents[1]
SCENARIO_DIR = ROOT / "scenarios"


def load_tree(name):
    """Parse scenarios/<name>.toml into a plain dict."""
    with open(SCENARIO_DIR / f"{name}.toml", "rb") as fh:
        return tomllib.load(fh)


def shrink_tree(tree, n_times=60, n_space=121, radius=None, n_paths=4000):
    """Copy of a scenario tree with a coarse grid and few paths, for
    unit tests that need a solved economy but not production accuracy."""
    tree = copy.deepcopy(tree)
    grid = tree["grid"]
    dim = int(tree.get("diffusion", {}).get("dimension", 1))
    grid["n_times"] = n_times
    grid["n_space"] = [n_space] * dim
    if radius is not None:
        grid["radius"] = [radius] * dim
    tree.setdefault("mc", {})["n_paths"] = n_paths
    return tree


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIO_DIR


@pytest.fixture(scope="session")
def benchmark_small():
    """Coarse-grid solve of the Gaussian benchmark scenario: exercises the
    whole solve path once and is shared by the pricing / verification /
    completeness unit tests.  Accuracy at this resolution is ~1e-3."""
    from radnerlab import (evaluate_primitives, scenario_from_tree,
                           simulate_paths, solve_equilibrium)

    sc = scenario_from_tree(shrink_tree(load_tree("benchmark"),
                                        n_times=60, n_space=201, radius=8,
                                        n_paths=4000))
    bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, sc.n_paths, sc.seed)
    prims = evaluate_primitives(sc.econ, bundle)
    sol = solve_equilibrium(sc.econ, prims, sc.tgrid.times, sc.sgrid,
                            solver_config=sc.solver, theta=sc.theta)
    return sc, prims, sol


@pytest.fixture(scope="session")
def pair_small():
    """Coarse solve of the two-agent symmetric scenario (heterogeneous
    machinery: CRRA agents, dividends, discounting)."""
    from radnerlab import (evaluate_primitives, scenario_from_tree,
                           simulate_paths, solve_equilibrium)

    sc = scenario_from_tree(shrink_tree(load_tree("symmetric-pair"),
                                        n_times=50, n_space=301,
                                        n_paths=4000))
    bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, sc.n_paths, sc.seed)
    prims = evaluate_primitives(sc.econ, bundle)
    sol = solve_equilibrium(sc.econ, prims, sc.tgrid.times, sc.sgrid,
                            solver_config=sc.solver, theta=sc.theta)
    return sc, prims, sol
