"""Verification suite: every check passes on a solved scenario and every
negative control (bias-injected twin) fails its own check."""

import json

import numpy as np
import pytest

from radnerlab.verify import (VerifyConfig, check_clearing, copy_income_scaled,
                              prepare_paths, run_suite)

CHECK_NAMES = ("clearing", "optimality", "budget", "ad_radner_translation",
               "martingale")


@pytest.fixture(scope="module")
def suite(benchmark_small):
    sc, prims, sol = benchmark_small
    return run_suite(sol, prims, sc.verify)


def test_all_checks_pass_on_the_benchmark(suite):
    assert [c.name for c in suite.checks] == list(CHECK_NAMES)
    for check in suite.checks:
        assert check.passed, f"{check.name}: {check.statistic:.3e}"
    assert suite.passed


def test_every_negative_control_fails_its_check(suite):
    assert [c.name for c in suite.negative_controls] == [
        n + "_control" for n in ("clearing", "optimality", "budget",
                                 "ad_radner", "martingale")]
    for control in suite.negative_controls:
        assert not control.passed, f"{control.name} should have failed"
    assert suite.controls_ok


def test_suite_serializes_to_json(suite):
    payload = json.dumps(suite.to_jsonable())
    back = json.loads(payload)
    assert {c["name"] for c in back["checks"]} == set(CHECK_NAMES)
    assert all(isinstance(c["passed"], bool) for c in back["checks"])


def test_prepared_paths_internal_consistency(benchmark_small):
    sc, prims, sol = benchmark_small
    work = prepare_paths(sol, prims)
    k = sc.tgrid.times.size
    assert work.density.shape == (sc.n_paths, k)
    assert np.all(work.density > 0) and np.all(work.numeraire > 0)
    assert np.all(work.marginal > 0)
    # allocations respect market clearing against the income paths exactly
    np.testing.assert_allclose(work.allocations.sum(axis=-1),
                               prims.income_rate, rtol=1e-12)
    np.testing.assert_allclose(work.allocations_terminal.sum(axis=-1),
                               prims.income_terminal, rtol=1e-12)
    # the state price is the discounted marginal, column by column
    np.testing.assert_allclose(
        work.state_price_terminal,
        work.state_price[:, -1] / work.marginal[:, -1]
        * work.marginal_terminal, rtol=1e-12)


def test_income_scaling_touches_only_the_chosen_agent(pair_small):
    _, prims, _ = pair_small
    twin = copy_income_scaled(prims, 1.05, agent=0)
    np.testing.assert_allclose(twin.agent_income_rates[0],
                               1.05 * prims.agent_income_rates[0], rtol=0)
    np.testing.assert_array_equal(twin.agent_income_rates[1],
                                  prims.agent_income_rates[1])
    np.testing.assert_array_equal(twin.income_rate, prims.income_rate)


def test_clearing_detects_a_tiny_imbalance(benchmark_small):
    sc, prims, sol = benchmark_small
    work = prepare_paths(sol, prims)
    clean = check_clearing(work, prims, 1e-8)
    assert clean.passed and clean.statistic < 1e-12
    import copy
    bumped = copy.copy(work)
    bumped.allocations = work.allocations * (1 + 2e-8)
    dirty = check_clearing(bumped, prims, 1e-8)
    assert not dirty.passed
    assert dirty.statistic == pytest.approx(2e-8, rel=1e-6)


def test_martingale_control_margin_is_decisive(suite):
    control = next(c for c in suite.negative_controls
                   if c.name == "martingale_control")
    # the injected drift is sized at three rejection thresholds: every
    # occupied bin must reject, not just a bare majority
    assert control.statistic == pytest.approx(1.0)


def test_config_round_trip_defaults():
    config = VerifyConfig()
    assert config.clearing_tol == 1e-8
    assert config.pde_rel_tol == 2e-3
    assert config.martingale_pairs == ((0.25, 0.75),)
