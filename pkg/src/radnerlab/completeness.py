"""Market-completeness diagnostics.

Two layers of evidence, neither a proof:

* a grid sweep of the dispersion matrix (price-surface Jacobians times the
  diffusion volatility): the market is flagged complete when the smallest
  singular value stays above a scale-free threshold on all but a negligible
  fraction of interior nodes;
* a replication probe: synthetic terminal claims are priced by the same
  backward solver, their hedges are projected onto the stock-gain
  processes, and the self-financing reconstruction error along simulated
  paths must be small relative to the claim's size.

The probe refuses to run when the dispersion sweep failed (there is nothing
to project onto), raising CompletenessError — that is the designed behaviour
on deliberately degenerate economies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import TimeGrid, path_integral, simulate_paths
from .errors import CompletenessError, ConfigError
from .expressions import Constant
from .pricing import solve_claim_surface, solve_hedge_systems


@dataclass
class DispersionReport:
    """Smallest-singular-value sweep of the dispersion matrix."""

    rel_tol: float
    fail_fraction_tol: float
    interior_fraction: float
    threshold: float
    noise_floor: float
    median_sigma_max: float
    min_sigma_min: float
    median_sigma_min: float
    fail_fraction: float
    n_interior_nodes: int
    per_level: list = field(default_factory=list)
    sigma_min: np.ndarray | None = None       # (n_levels-1, *npoints)
    interior_mask: np.ndarray | None = None   # spatial mask

    @property
    def passed(self):
        return self.fail_fraction <= self.fail_fraction_tol

    def to_jsonable(self):
        return {
            "passed": bool(self.passed),
            "rel_tol": self.rel_tol,
            "fail_fraction_tol": self.fail_fraction_tol,
            "interior_fraction": self.interior_fraction,
            "threshold": self.threshold,
            "noise_floor": self.noise_floor,
            "median_sigma_max": self.median_sigma_max,
            "min_sigma_min": self.min_sigma_min,
            "median_sigma_min": self.median_sigma_min,
            "fail_fraction": self.fail_fraction,
            "n_interior_nodes": self.n_interior_nodes,
        }


def dispersion(solution, rel_tol=1e-6, fail_fraction_tol=1e-3,
               interior_fraction=0.5):
    """Sweep the dispersion matrix over all interior grid nodes with t < 1.

    A node fails when its smallest singular value is <= rel_tol times the
    median largest singular value over the interior (a scale-free numerical
    rank test: rescaling every payoff rescales both sides).  The threshold
    is floored at the roundoff level of the finite-difference gradients
    (machine epsilon times the stock-surface scale over the grid spacing,
    with a large safety factor), so that a market whose every stock is flat
    -- where the median largest singular value itself collapses to zero --
    still fails at nodes carrying pure rounding noise.
    """
    sgrid = solution.sgrid
    times = solution.times[:-1]
    nodes = sgrid.flat_states()
    n = nodes.shape[0]
    d = sgrid.dimension
    n_stocks = solution.econ.n_stocks

    grads = np.empty((times.size, n, n_stocks, d))
    for j in range(n_stocks):
        surface = solution.stock_surfaces[j]
        for axis in range(d):
            g = surface.gradient(axis).values[:-1]
            grads[:, :, j, axis] = g.reshape(times.size, n)
    sig = solution.econ.diffusion.sigma_at(times[:, None],
                                           nodes[None, :, :])
    disp = np.einsum("knjd,knde->knje", grads, sig)
    svals = np.linalg.svd(disp, compute_uv=False)
    sigma_min = svals[..., -1]
    sigma_max = svals[..., 0]

    mask = sgrid.interior_mask(interior_fraction).ravel()
    inner_min = sigma_min[:, mask]
    inner_max = sigma_max[:, mask]
    median_max = float(np.median(inner_max))
    rms_values = np.sqrt(np.mean(np.stack(
        [s.values[:-1].reshape(times.size, n)[:, mask]
         for s in solution.stock_surfaces]) ** 2))
    noise_floor = (1e4 * np.finfo(float).eps
                   * max(float(rms_values), 1e-300) / min(sgrid.dx))
    threshold = max(rel_tol * median_max, noise_floor)
    fails = inner_min <= threshold
    per_level = []
    for k in range(times.size):
        per_level.append({
            "time": float(times[k]),
            "min_sigma_min": float(inner_min[k].min()),
            "median_sigma_min": float(np.median(inner_min[k])),
            "fail_count": int(fails[k].sum()),
            "n_nodes": int(inner_min[k].size),
        })
    return DispersionReport(
        rel_tol=rel_tol,
        fail_fraction_tol=fail_fraction_tol,
        interior_fraction=interior_fraction,
        threshold=threshold,
        noise_floor=noise_floor,
        median_sigma_max=median_max,
        min_sigma_min=float(inner_min.min()),
        median_sigma_min=float(np.median(inner_min)),
        fail_fraction=float(fails.mean()),
        n_interior_nodes=int(inner_min.size),
        per_level=per_level,
        sigma_min=sigma_min.reshape((times.size,) + tuple(sgrid.npoints)),
        interior_mask=sgrid.interior_mask(interior_fraction),
    )


def _random_claims(dimension, n_claims, seed):
    """Quadratic polynomial payoffs with coefficients from a dedicated
    counter-based substream (independent of the path substreams)."""
    claims = []
    for idx in range(n_claims):
        key = np.array([seed, 2 ** 32 + idx], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        const = gen.uniform(-1.0, 1.0)
        lin = gen.uniform(-1.0, 1.0, dimension)
        quad = gen.uniform(-1.0, 1.0, dimension)

        def payoff(x, const=const, lin=lin, quad=quad):
            x = np.asarray(x, dtype=float)
            return (const + x @ lin + (x ** 2) @ quad)
        claims.append((f"quadratic_{idx}", payoff))
    return claims


def _has_dividends(econ):
    for stock in econ.stocks:
        rate = stock.dividend_rate
        if not (isinstance(rate, Constant) and rate.value == 0.0):
            return True
    return False


@dataclass
class ProbeReport:
    """Replication-probe outcome per claim plus the worst case."""

    bound: float
    n_paths: int
    n_steps: int
    claims: list = field(default_factory=list)

    @property
    def worst(self):
        return max(c["rel_rms"] for c in self.claims)

    @property
    def passed(self):
        return self.worst <= self.bound

    def to_jsonable(self):
        return {
            "passed": bool(self.passed),
            "bound": self.bound,
            "worst_rel_rms": self.worst,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "claims": [dict(c) for c in self.claims],
        }


def martingale_uniqueness_probe(solution, dispersion_report, seed,
                                claims=(), n_random_claims=2,
                                n_paths=3000, n_steps=12000,
                                chunk_paths=1000, rel_rms_bound=0.01,
                                theta=0.5):
    """Price synthetic claims, hedge them with the stocks, and measure the
    self-financing reconstruction error along freshly simulated paths.

    The error of a discretely rebalanced hedge scales like sqrt(dt) in the
    rebalancing step, so the probe simulates its own fine time grid rather
    than reusing the pricing grid; surfaces are sampled with linear
    time-blending, which adds only O(surface dt^2) bias.
    """
    if not dispersion_report.passed:
        raise CompletenessError(
            "dispersion sweep failed (rank-deficient market): the "
            "replication probe has nothing to project onto")
    econ = solution.econ
    d = econ.diffusion.dimension
    all_claims = list(claims) + _random_claims(d, n_random_claims, seed)
    if not all_claims:
        raise ConfigError("replication probe needs at least one claim")

    sgrid = solution.sgrid
    nodes = sgrid.flat_states()
    kernels = solution.kernels
    density = solution.density_surface
    surfaces = []
    for name, payoff in all_claims:
        nu_phi, _ = solve_claim_surface(kernels, solution.times, sgrid,
                                        payoff(nodes), density, theta=theta)
        grads = [nu_phi.gradient(axis) for axis in range(d)]
        surfaces.append((name, payoff, nu_phi, grads))

    stock_grads = [[solution.stock_surfaces[j].gradient(axis)
                    for axis in range(d)]
                   for j in range(econ.n_stocks)]
    pay_dividends = _has_dividends(econ)

    tgrid = TimeGrid.uniform(int(n_steps) + 1)
    times = tgrid.times
    sq_err = np.zeros(len(all_claims))
    sq_pay = np.zeros(len(all_claims))
    total = 0
    for start in range(0, int(n_paths), int(chunk_paths)):
        count = min(int(chunk_paths), int(n_paths) - start)
        bundle = simulate_paths(econ.diffusion, tgrid, count, seed,
                                first_path=start)
        states = bundle.states
        q_int = path_integral(bundle, econ.notional_growth)

        # deflated stock gains on the fine grid
        gains = []
        loadings_rows = []
        sig = econ.diffusion.sigma_at(times[None, :-1], states[:, :-1, :])
        if pay_dividends:
            v_paths = density.sample_paths(times, states)
            marg = kernels.marginal_at_income(times[None, :], states)
            numeraire = np.exp(q_int) * v_paths / marg
        for j in range(econ.n_stocks):
            p_int = path_integral(bundle, econ.stocks[j].dividend_growth)
            alpha = np.exp(p_int - q_int)
            s_paths = solution.stock_surfaces[j].sample_paths(times, states)
            gain = alpha * s_paths
            if pay_dividends:
                payout = (econ.stocks[j].dividend_rate(times[None, :],
                                                       states)
                          * np.exp(p_int) / numeraire)
                payout = np.broadcast_to(payout, s_paths.shape)
                accr = np.zeros_like(gain)
                np.cumsum(0.5 * (payout[:, :-1] + payout[:, 1:])
                          * tgrid.dt[None, :], axis=1, out=accr[:, 1:])
                gain = gain + accr
            gains.append(gain)
            grad = np.stack([g.sample_paths(times[:-1], states[:, :-1, :])
                             for g in stock_grads[j]], axis=-1)
            load = np.einsum("pki,pkij->pkj", grad, sig)
            loadings_rows.append(alpha[:, :-1, None] * load)
        loadings = np.stack(loadings_rows, axis=2)   # (P, K-1, J, d)
        deltas = np.stack([g[:, 1:] - g[:, :-1] for g in gains], axis=2)

        for idx, (name, payoff, nu_phi, grads) in enumerate(surfaces):
            grad = np.stack([g.sample_paths(times[:-1], states[:, :-1, :])
                             for g in grads], axis=-1)
            target = np.einsum("pki,pkij->pkj", grad, sig)
            eta = solve_hedge_systems(loadings, target)
            v0 = float(nu_phi.interpolate(0.0, econ.diffusion.x0[None, :])[0])
            payoffs = payoff(bundle.terminal)
            err = (v0 + np.einsum("pkj,pkj->pk", eta, deltas).sum(axis=1)
                   - payoffs)
            sq_err[idx] += float(np.sum(err ** 2))
            sq_pay[idx] += float(np.sum(payoffs ** 2))
        total += count

    rows = []
    for idx, (name, *_rest) in enumerate(surfaces):
        rms_err = np.sqrt(sq_err[idx] / total)
        rms_pay = np.sqrt(max(sq_pay[idx] / total, 1e-300))
        rows.append({
            "name": name,
            "rms_error": float(rms_err),
            "rms_payoff": float(rms_pay),
            "rel_rms": float(rms_err / rms_pay),
        })
    return ProbeReport(bound=float(rel_rms_bound), n_paths=int(total),
                       n_steps=int(n_steps), claims=rows)
