"""Excess-expenditure map and the weight solver.

Oracle: with logarithmic agents, expenditure shares equal weights path by
path, so the excess map vanishes identically at weights equal to income
shares — the solved weights are known exactly.  The per-path excesses sum
to zero by construction for any weights (aggregate budget; the map only
reallocates), which is the invariant the property test drives.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radnerlab.diffusion import simulate_paths
from radnerlab.economy import evaluate_primitives
from radnerlab.negishi import (BoundaryError, NonConvergence, SolverConfig,
                               excess_map, solve_weights)
from radnerlab.scenario import scenario_from_tree

from conftest import load_tree, shrink_tree


def build(name, n_paths, n_times, **tweaks):
    tree = shrink_tree(load_tree(name), n_paths=n_paths, n_times=n_times)
    for key, val in tweaks.items():
        tree[key] = val
    sc = scenario_from_tree(tree)
    bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, sc.n_paths, sc.seed)
    prims = evaluate_primitives(sc.econ, bundle)
    return sc, prims


@pytest.fixture(scope="module")
def pair():
    sc, prims = build("symmetric-pair", n_paths=800, n_times=20)
    return prims, sc.econ.utilities(), sc.econ.terminal_utilities()


@pytest.fixture(scope="module")
def log_pair():
    sc, prims = build("asymmetric-log", n_paths=600, n_times=20)
    return prims, sc.econ.utilities(), sc.econ.terminal_utilities()


@given(w1=st.floats(min_value=0.05, max_value=0.95))
@settings(max_examples=25, deadline=None)
def test_pathwise_excesses_sum_to_zero_at_any_weights(pair, w1):
    prims, us, uT = pair
    report = excess_map(np.array([w1, 1.0 - w1]), prims, us, uT)
    assert report.pathwise_sum_max < 1e-10
    np.testing.assert_allclose(report.phi.sum(), 0.0, atol=1e-10)


def test_excess_report_bookkeeping(pair):
    prims, us, uT = pair
    report = excess_map(np.array([0.3, 0.7]), prims, us, uT)
    assert report.n_paths == 800
    assert report.phi.shape == (2,) and report.se.shape == (2,)
    assert report.max_abs == np.abs(report.phi).max()
    # starving one agent of weight forces it to over-earn: phi < 0
    assert report.phi[0] < 0 < report.phi[1]


def test_log_agents_make_income_shares_the_exact_root(log_pair):
    prims, us, uT = log_pair
    report = excess_map(np.array([0.3, 0.7]), prims, us, uT)
    assert report.max_abs < 1e-12


def test_solver_recovers_log_weights_exactly(log_pair):
    prims, us, uT = log_pair
    res = solve_weights(prims, us, uT, SolverConfig(start=(0.5, 0.5)))
    assert res.converged
    np.testing.assert_allclose(res.weights, [0.3, 0.7], atol=1e-12)
    assert res.residual < 1e-12
    assert all(row["pathwise_sum_max"] < 1e-10 for row in res.trace)


def test_solver_symmetric_pair_from_lopsided_start(pair):
    prims, us, uT = pair
    res = solve_weights(prims, us, uT, SolverConfig(start=(0.8, 0.2)))
    assert res.converged and res.n_iter <= 25
    np.testing.assert_allclose(res.weights, [0.5, 0.5], atol=1e-6)
    assert res.weights.min() > 1e-4
    # trace rows carry the iterate, the residual, and the damping used
    for row in res.trace:
        assert set(row) >= {"iter", "weights", "residual", "step",
                            "pathwise_sum_max"}
        assert 0.0 <= row["step"] <= 1.0


def test_solver_reports_nonconvergence_with_best_iterate(pair):
    prims, us, uT = pair
    with pytest.raises(NonConvergence) as err:
        solve_weights(prims, us, uT,
                      SolverConfig(start=(0.95, 0.05), max_iter=1))
    assert err.value.best.shape == (2,)
    assert len(err.value.trace) == 1


def test_multistart_falls_back_to_the_next_start(log_pair):
    prims, us, uT = log_pair
    res = solve_weights(prims, us, uT, SolverConfig(
        start=(0.999, 0.001), max_iter=2, multistart=((0.6, 0.4),)))
    assert res.converged
    np.testing.assert_allclose(res.weights, [0.3, 0.7], atol=1e-10)


def test_zero_income_agent_hits_the_boundary():
    tree = shrink_tree(load_tree("symmetric-pair"), n_paths=400, n_times=15)
    tree["agents"][0]["income_share"] = 1.0
    tree["agents"][0]["terminal_share"] = 1.0
    tree["agents"][1]["income_share"] = 0.0
    tree["agents"][1]["terminal_share"] = 0.0
    sc = scenario_from_tree(tree)
    bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, 400, sc.seed)
    prims = evaluate_primitives(sc.econ, bundle)
    with pytest.raises(BoundaryError, match="boundary"):
        solve_weights(prims, sc.econ.utilities(),
                      sc.econ.terminal_utilities(),
                      SolverConfig(start=(0.5, 0.5)))
