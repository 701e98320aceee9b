"""Scenario TOML parsing, validation errors, defaults, and the
deterministic emitter used for artifact dumps."""

import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from radnerlab import (ConfigError, build_utility, load_scenario,
                       scenario_from_tree, scenario_to_toml)
from radnerlab.utilities import (CRRAUtility, ScaledUtility, SumUtility,
                                 UtilityFn)

from conftest import SCENARIO_DIR, load_tree

SCENARIOS = sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def minimal_tree(**extra):
    tree = {
        "name": "tiny",
        "economy": {"log_terminal_endowment": {"kind": "affine", "axis": 0}},
        "stocks": [{"name": "idx",
                    "terminal_payoff": {"kind": "affine", "axis": 0}}],
        "agents": [{"name": "solo",
                    "utility": {"kind": "crra", "risk_aversion": 1.0},
                    "income_share": 1.0}],
    }
    tree.update(extra)
    return tree


# ---------------------------------------------------------------------------
# shipped catalog


def test_catalog_has_six_scenarios():
    assert len(SCENARIOS) == 6


@pytest.mark.parametrize("name", SCENARIOS)
def test_shipped_scenarios_load(name):
    sc = load_scenario(SCENARIO_DIR / f"{name}.toml")
    assert sc.name == name
    assert sc.econ.n_agents >= 1 and sc.econ.n_stocks >= 1
    assert sc.sgrid.dimension == sc.econ.diffusion.dimension


@pytest.mark.parametrize("name", SCENARIOS)
def test_emitter_round_trips_shipped_trees(name):
    tree = load_tree(name)
    assert tomllib.loads(scenario_to_toml(tree)) == tree


def test_emitter_is_deterministic():
    tree = load_tree("benchmark")
    assert scenario_to_toml(tree) == scenario_to_toml(copy.deepcopy(tree))


def test_twofactor_overrides_verify_tolerance():
    sc = load_scenario(SCENARIO_DIR / "twofactor.toml")
    assert sc.verify.pde_rel_tol == 3e-3


def test_degenerate_scenario_expects_rank_failure():
    sc = load_scenario(SCENARIO_DIR / "degenerate-flat.toml")
    assert sc.completeness.expect_rank_failure is True


# ---------------------------------------------------------------------------
# validation errors name the offending location


def test_missing_name_rejected():
    with pytest.raises(ConfigError, match="top-level 'name'"):
        scenario_from_tree({"economy": {}})


def test_missing_economy_section_rejected():
    with pytest.raises(ConfigError, match=r"\[economy\] section"):
        scenario_from_tree({"name": "x"})


def test_missing_terminal_endowment_rejected():
    tree = minimal_tree(economy={})
    with pytest.raises(ConfigError,
                       match=r"economy.*log_terminal_endowment"):
        scenario_from_tree(tree)


def test_missing_stock_payoff_names_the_stock():
    tree = minimal_tree(stocks=[{"name": "idx"}])
    with pytest.raises(ConfigError, match=r"stocks\[0\].*terminal_payoff"):
        scenario_from_tree(tree)


def test_missing_income_share_names_the_agent():
    tree = minimal_tree()
    del tree["agents"][0]["income_share"]
    with pytest.raises(ConfigError, match=r"agents\[0\].*income_share"):
        scenario_from_tree(tree)


def test_unknown_utility_kind_rejected():
    tree = minimal_tree()
    tree["agents"][0]["utility"] = {"kind": "quadratic"}
    with pytest.raises(ConfigError, match="unknown utility kind 'quadratic'"):
        scenario_from_tree(tree)


def test_sigma_shape_mismatch_rejected():
    tree = minimal_tree(diffusion={"dimension": 2, "sigma": [[1.0]]})
    with pytest.raises(ConfigError, match="2x2"):
        scenario_from_tree(tree)


def test_reference_with_unknown_stock_rejected():
    tree = minimal_tree(reference=[{"target": "stock", "stock": "nope",
                                    "field": 1.0}])
    with pytest.raises(ConfigError, match="unknown stock 'nope'"):
        scenario_from_tree(tree)


def test_reference_with_unknown_target_rejected():
    tree = minimal_tree(reference=[{"target": "bond", "field": 1.0}])
    with pytest.raises(ConfigError, match="unknown target 'bond'"):
        scenario_from_tree(tree)


def test_expression_axis_out_of_range_names_the_field():
    tree = minimal_tree()
    tree["economy"]["log_terminal_endowment"] = {"kind": "affine", "axis": 3}
    with pytest.raises(ConfigError, match="log_terminal_endowment"):
        scenario_from_tree(tree)


def test_load_scenario_prefixes_the_file_name(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text('name = "broken"\n')
    with pytest.raises(ConfigError, match="broken.toml"):
        load_scenario(path)


# ---------------------------------------------------------------------------
# defaults


def test_defaults_fill_missing_sections():
    sc = scenario_from_tree(minimal_tree())
    assert sc.seed == 0
    assert sc.n_paths == 20000
    assert sc.theta == 0.5
    assert sc.tgrid.n_steps == 100
    assert sc.sgrid.npoints == (201,)
    assert sc.verify.clearing_tol == 1e-8
    assert sc.completeness.expect_rank_failure is False
    agent = sc.econ.agents[0]
    assert agent.terminal_utility is agent.utility


def test_terminal_share_defaults_to_income_share():
    tree = minimal_tree(agents=[
        {"name": "a", "utility": {"kind": "crra"}, "income_share": 0.3},
        {"name": "b", "utility": {"kind": "crra"}, "income_share": 0.7,
         "terminal_share": 0.5},
    ])
    sc = scenario_from_tree(tree)
    x = np.zeros((1, 1))
    assert sc.econ.agents[0].terminal_share is sc.econ.agents[0].income_share
    assert float(sc.econ.agents[1].terminal_share(1.0, x)[0]) == 0.5
    assert float(sc.econ.agents[1].income_share(1.0, x)[0]) == 0.7


def test_explicit_grid_bounds_are_honoured():
    tree = minimal_tree(grid={"n_times": 11, "n_space": [7],
                              "lower": [-2.0], "upper": [3.0]})
    sc = scenario_from_tree(tree)
    assert sc.sgrid.lower == (-2.0,)
    assert sc.sgrid.upper == (3.0,)
    assert sc.sgrid.npoints == (7,)


def test_centered_grid_uses_radius_around_start():
    tree = minimal_tree(diffusion={"dimension": 1, "x0": [1.5]},
                        grid={"n_space": 9, "radius": 4.0})
    sc = scenario_from_tree(tree)
    assert sc.sgrid.lower == (-2.5,)
    assert sc.sgrid.upper == (5.5,)


# ---------------------------------------------------------------------------
# utility table parsing


def test_build_utility_kinds():
    crra = build_utility({"kind": "crra", "risk_aversion": 2.0}, "u")
    assert isinstance(crra, CRRAUtility) and crra.risk_aversion == 2.0
    scaled = build_utility({"kind": "scale", "weight": 0.5,
                            "inner": {"kind": "crra"}}, "u")
    assert isinstance(scaled, ScaledUtility) and scaled.weight == 0.5
    total = build_utility({"kind": "sum",
                           "parts": [{"kind": "crra"},
                                     {"kind": "crra",
                                      "risk_aversion": 3.0}]}, "u")
    assert isinstance(total, SumUtility) and len(total.parts) == 2
    conv = build_utility({"kind": "convolve", "left": {"kind": "crra"},
                          "right": {"kind": "crra"}}, "u")
    assert isinstance(conv, UtilityFn)
    # the convolution of two log utilities splits consumption in half
    marginal = conv.dc(0.0, np.array([2.0]), np.zeros((1, 1)))
    assert float(marginal[0]) == pytest.approx(1.0, rel=1e-10)


def test_build_utility_nested_error_location():
    with pytest.raises(ConfigError, match=r"u\.inner"):
        build_utility({"kind": "scale", "inner": {"kind": "nope"}}, "u")


# ---------------------------------------------------------------------------
# emitter corner cases


def test_emitter_rejects_nan_and_inf():
    with pytest.raises(ConfigError, match="nan/inf"):
        scenario_to_toml({"name": "x", "bad": math.nan})
    with pytest.raises(ConfigError, match="nan/inf"):
        scenario_to_toml({"name": "x", "bad": math.inf})


scalar = st.one_of(
    st.integers(min_value=-10**9, max_value=10**9),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.booleans(),
    st.text(min_size=0, max_size=12))
key = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)


@settings(max_examples=60, deadline=None)
@given(tree=st.fixed_dictionaries(
    {"name": st.just("fuzz")},
    optional={"seed": st.integers(0, 2**31 - 1),
              "mc": st.dictionaries(key, scalar, max_size=4),
              "grid": st.dictionaries(key, scalar, max_size=4),
              "tags": st.lists(scalar, max_size=3),
              "stocks": st.lists(st.dictionaries(key, scalar, min_size=1,
                                                 max_size=3),
                                 min_size=1, max_size=2)}))
def test_emitter_round_trips_arbitrary_scalar_trees(tree):
    assert tomllib.loads(scenario_to_toml(tree)) == tree
