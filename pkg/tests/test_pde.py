"""Backward parabolic solver against Gaussian closed forms.

Zero-drift unit-volatility oracle: with terminal data exp(-k.x) the
solution is exp(-k.x + |sigma' k|^2 (1-t) / 2) (Gaussian moment
generating function).  Linear terminal data and constant sources are
reproduced exactly by the theta scheme and the extrapolation boundary
rows, which pins those cases at roundoff.
"""

import numpy as np
import pytest

from radnerlab import SolverError
from radnerlab.diffusion import DiffusionSpec, SpatialGrid, TimeGrid
from radnerlab.expressions import Constant
from radnerlab.pde import GridFunction, solve_parabolic


def unit_spec(drift=0.0):
    return DiffusionSpec(1, np.array([0.0]), [Constant(drift)],
                         [[Constant(1.0)]], 1.0)


GRID = SpatialGrid.centered([0.0], [8.0], [161])
TIMES = TimeGrid.uniform(60).times
TERM = np.exp(-GRID.flat_states()[:, 0])


def interior_max_rel(gf, want_fn, fraction=0.5):
    mask = gf.sgrid.interior_mask(fraction)
    worst = 0.0
    for k, t in enumerate(gf.times):
        want = want_fn(t, gf.sgrid.states())
        worst = max(worst, np.abs((gf.values[k] - want) / want)[mask].max())
    return worst


def test_heat_kernel_closed_form():
    sol = solve_parabolic(unit_spec(), TIMES, GRID, TERM, static=True)
    err = interior_max_rel(
        sol, lambda t, s: np.exp(-s[..., 0] + (1 - t) / 2))
    assert err < 1e-3           # measured 4.2e-4 at this resolution


def test_constant_reaction_discounts_the_heat_kernel():
    sol = solve_parabolic(
        unit_spec(), TIMES, GRID, TERM,
        reaction=lambda t, pts: np.full(pts.shape[0], 0.7), static=True)
    err = interior_max_rel(
        sol, lambda t, s: np.exp(0.7 * (1 - t) - s[..., 0] + (1 - t) / 2))
    assert err < 1e-3           # measured 4.6e-4


def test_two_factor_correlated_heat_kernel():
    spec = DiffusionSpec(2, np.zeros(2), [Constant(0.0)] * 2,
                         [[Constant(1.0), Constant(0.0)],
                          [Constant(0.3), Constant(0.95)]], 1.6)
    sg = SpatialGrid.centered([0.0, 0.0], [6.0, 6.0], [81, 81])
    term = np.exp(-sg.flat_states().sum(axis=1))
    sol = solve_parabolic(spec, TimeGrid.uniform(40).times, sg, term,
                          static=True)
    rate = (1.3 ** 2 + 0.95 ** 2) / 2   # |sigma' (1,1)|^2 / 2
    err = interior_max_rel(
        sol, lambda t, s: np.exp(-s[..., 0] - s[..., 1] + rate * (1 - t)),
        fraction=0.4)
    assert err < 1e-2           # measured 4.3e-3


def test_linear_terminal_data_is_exact():
    lin = 2.0 + 3.0 * GRID.flat_states()[:, 0]
    sol = solve_parabolic(unit_spec(), TIMES, GRID, lin, static=True)
    want = 2.0 + 3.0 * GRID.states()[None, :, 0]
    assert np.abs(sol.values - want).max() < 1e-12


def test_constant_source_integrates_exactly():
    zeros = np.zeros(GRID.flat_states().shape[0])
    sol = solve_parabolic(unit_spec(), TIMES, GRID, zeros,
                          source=lambda t, pts: np.ones(pts.shape[0]),
                          static=True)
    assert np.abs(sol.values - (1.0 - TIMES)[:, None]).max() < 1e-13


def test_static_factorization_reuse_changes_nothing():
    a = solve_parabolic(unit_spec(), TIMES, GRID, TERM, static=True)
    b = solve_parabolic(unit_spec(), TIMES, GRID, TERM, static=False)
    np.testing.assert_array_equal(a.values, b.values)


def test_strong_drift_triggers_upwinding_and_stays_bounded():
    # cell Peclet = 40 * 0.1 / 1 = 4 > 2: first-order upwinding engages;
    # without it the centred scheme oscillates
    sol = solve_parabolic(unit_spec(drift=40.0), TIMES, GRID, TERM)
    assert np.isfinite(sol.values).all()
    assert sol.values.max() <= TERM.max() * (1 + 1e-12)
    # extrapolation boundary rows are not monotone: allow a roundoff-scale
    # undershoot below zero, but nothing material
    assert sol.values.min() >= -1e-4 * TERM.max()


def test_growth_guard_rejects_unstable_explicit_march():
    with pytest.raises(SolverError, match="outside the growth envelope"):
        solve_parabolic(unit_spec(), TimeGrid.uniform(10).times, GRID, TERM,
                        theta=0.0)


def test_grid_function_interpolation_and_gradient():
    sg = SpatialGrid.centered([0.0], [2.0], [5])
    times = np.array([0.0, 0.5, 1.0])
    # v(t, x) = 4x + 10t sampled on the grid
    vals = 4.0 * sg.states()[None, :, 0] + 10.0 * times[:, None]
    gf = GridFunction(times, sg, vals)
    # node hit, linear blend between nodes, linear extrapolation outside
    assert gf.interpolate(0.5, np.array([[1.0]]))[0] == pytest.approx(9.0)
    assert gf.interpolate(0.25, np.array([[0.5]]))[0] == pytest.approx(4.5)
    assert gf.interpolate(0.0, np.array([[3.0]]))[0] == pytest.approx(12.0)
    grad = gf.gradient(0)
    np.testing.assert_allclose(grad.values, 4.0)

    states = np.array([[[-1.0], [0.25]], [[2.0], [-0.5]]])
    got = gf.sample_paths(np.array([0.25, 0.75]), states)
    want = 4.0 * states[:, :, 0] + 10.0 * np.array([0.25, 0.75])
    np.testing.assert_allclose(got, want, rtol=1e-14)


def test_grid_function_shape_validation():
    sg = SpatialGrid.centered([0.0], [1.0], [3])
    from radnerlab import ConfigError
    with pytest.raises(ConfigError, match="shape"):
        GridFunction(np.array([0.0, 1.0]), sg, np.zeros((2, 4)))
