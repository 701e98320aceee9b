"""Completeness machinery: dispersion rank test and the replication probe.

Benchmark oracle: the deflated stock surface is x - (1-t), whose gradient
is exactly one, and the volatility is one, so every interior singular value
equals 1 up to discretization.  The flat-payoff scenario destroys rank
everywhere.  The x^2 probe oracle is the discrete-hedging noise floor: a
claim with curvature one, hedged at interval dt against Brownian motion,
leaves a residual of RMS sqrt(dt/2) * sqrt(var(chi^2)) ~ sqrt(2 dt), about
sqrt(2 dt) / sqrt(3) of the payoff RMS.
"""

import numpy as np
import pytest

from radnerlab import (dispersion, evaluate_primitives,
                       martingale_uniqueness_probe, scenario_from_tree,
                       simulate_paths, solve_equilibrium)

from conftest import load_tree, shrink_tree


@pytest.fixture(scope="module")
def degenerate_small():
    sc = scenario_from_tree(shrink_tree(load_tree("degenerate-flat"),
                                        n_times=40, n_space=121,
                                        n_paths=2000))
    bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, sc.n_paths, sc.seed)
    prims = evaluate_primitives(sc.econ, bundle)
    sol = solve_equilibrium(sc.econ, prims, sc.tgrid.times, sc.sgrid,
                            solver_config=sc.solver, theta=sc.theta)
    return sc, prims, sol


def test_benchmark_dispersion_is_unit_volatility(benchmark_small):
    _, _, sol = benchmark_small
    report = dispersion(sol)
    assert report.passed
    assert report.fail_fraction == 0.0
    assert abs(report.min_sigma_min - 1.0) < 5e-3    # measured 2.4e-3
    assert abs(report.median_sigma_min - 1.0) < 5e-3
    # one row of singular values per non-terminal time level
    assert report.sigma_min.shape == (sol.times.size - 1,
                                      sol.sgrid.npoints[0])
    assert len(report.per_level) == sol.times.size - 1


def test_flat_payoff_market_fails_rank_everywhere(degenerate_small):
    _, _, sol = degenerate_small
    report = dispersion(sol)
    assert not report.passed
    assert report.fail_fraction == 1.0
    assert report.min_sigma_min == 0.0
    # with every stock surface flat the median spread collapses to zero;
    # only the machine-noise floor keeps the threshold meaningful
    assert report.median_sigma_max == 0.0
    assert report.noise_floor > 0.0
    assert report.threshold >= report.noise_floor


def test_dispersion_report_serializes(benchmark_small):
    import json
    _, _, sol = benchmark_small
    payload = json.loads(json.dumps(dispersion(sol).to_jsonable()))
    assert payload["passed"] is True
    assert payload["n_interior_nodes"] > 0


def test_replication_probe_prices_a_quadratic_claim(benchmark_small):
    _, _, sol = benchmark_small
    report = dispersion(sol)
    probe = martingale_uniqueness_probe(
        sol, report, seed=123,
        claims=[("square", lambda x1: x1[:, 0] ** 2)],
        n_random_claims=0, n_paths=300, n_steps=3000, chunk_paths=150,
        rel_rms_bound=0.05)
    assert probe.passed
    assert probe.n_paths == 300 and probe.n_steps == 3000
    row = probe.claims[0]
    assert row["name"] == "square"
    # discrete-hedging noise: rel RMS ~ sqrt(2 dt) / sqrt(3); allow [0.5, 2.5]x
    theory = np.sqrt(2.0 / 3000) / np.sqrt(3.0)
    assert 0.5 * theory < row["rel_rms"] < 2.5 * theory


def test_replication_probe_is_deterministic(benchmark_small):
    _, _, sol = benchmark_small
    report = dispersion(sol)
    kw = dict(claims=[("lump", lambda x1: np.abs(x1[:, 0]))],
              n_random_claims=0, n_paths=100, n_steps=500, chunk_paths=50,
              rel_rms_bound=0.5)
    a = martingale_uniqueness_probe(sol, report, seed=9, **kw)
    b = martingale_uniqueness_probe(sol, report, seed=9, **kw)
    assert a.worst == b.worst
    assert a.to_jsonable() == b.to_jsonable()


def test_random_claims_are_generated_when_requested(benchmark_small):
    _, _, sol = benchmark_small
    report = dispersion(sol)
    probe = martingale_uniqueness_probe(
        sol, report, seed=5, n_random_claims=2, n_paths=100, n_steps=400,
        chunk_paths=50, rel_rms_bound=0.5)
    assert len(probe.claims) == 2
    assert all(c["rel_rms"] < 0.5 for c in probe.claims)
