"""Equilibrium pricing: backward surfaces, pathwise processes, and hedges.

Given equilibrium weights, all prices reduce to terminal-value PDE solves
driven by three composite ingredients:

* the terminal kernel  K(x) = notional_payoff(x) * U_c(e^H(x), x; w),
* the density reaction beta(t,x) = notional_growth - impatience,
* per-stock reactions  p_j - impatience  and sources
  g_j(t,x) = dividend_rate_j * u_c(t, e^h(t,x), x; w).

The density surface v solves the homogeneous problem with reaction beta and
terminal K; the martingale generating the risk-neutral measure is then
Y_t = exp(int_0^t beta) v(t, X_t).  Stock j's deflated cum-dividend value is

    S_j(t) = int_0^t dividend_j / numeraire du
             + exp(int_0^t alpha_j) * s_j(t, X_t),        alpha_j = p_j - q,

with s_j = m_j / v and m_j the solve with reaction p_j - impatience and
source g_j.  Agent net-trade values use reaction -impatience and source
(allocation - income) * u_c.  Hedge ratios solve the pathwise linear system
matching diffusion loadings of the net-trade value to those of the stocks
(minimum-norm when there are more stocks than risk factors).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import path_integral
from .errors import CompletenessError, SolverError
from .negishi import SolverConfig, solve_weights, validate_simplex
from .pde import GridFunction, solve_parabolic
from .utilities import AggregateUtility


@dataclass
class PricingKernelSet:
    """Composite coefficient fields for the pricing PDEs at fixed weights."""

    econ: object
    weights: np.ndarray
    running_aggregate: AggregateUtility
    terminal_aggregate: AggregateUtility

    def __post_init__(self):
        validate_simplex(self.weights, self.econ.n_agents)

    # -- composite fields ------------------------------------------------
    def terminal_kernel(self, nodes):
        econ = self.econ
        endow = np.exp(econ.log_terminal_endowment(1.0, nodes))
        marg = self.terminal_aggregate.dc(1.0, endow, nodes)
        return econ.notional_payoff(1.0, nodes) * marg

    def marginal_at_income(self, t, nodes):
        income = np.exp(self.econ.log_income_rate(t, nodes))
        return self.running_aggregate.dc(t, income, nodes)

    def density_reaction(self, t, nodes):
        return (self.econ.notional_growth(t, nodes)
                - self.econ.impatience(t, nodes))

    def stock_reaction(self, j):
        stock = self.econ.stocks[j]

        def reaction(t, nodes):
            return (stock.dividend_growth(t, nodes)
                    - self.econ.impatience(t, nodes))
        return reaction

    def stock_source(self, j):
        stock = self.econ.stocks[j]

        def source(t, nodes):
            return (stock.dividend_rate(t, nodes)
                    * self.marginal_at_income(t, nodes))
        return source

    def agent_source(self, m):
        econ = self.econ

        def source(t, nodes):
            income = np.exp(econ.log_income_rate(t, nodes))
            marg, alloc = \
                self.running_aggregate.marginal_and_allocations(
                    t, income, nodes)
            share = econ.income_shares_at(t, nodes)[..., m]
            return (alloc[..., m] - share * income) * marg
        return source

    def agent_terminal(self, nodes, m):
        econ = self.econ
        endow = np.exp(econ.log_terminal_endowment(1.0, nodes))
        marg, alloc = self.terminal_aggregate.marginal_and_allocations(
            1.0, endow, nodes)
        share = econ.terminal_shares_at(nodes)[..., m]
        return (alloc[..., m] - share * endow) * marg

    # -- static hints ----------------------------------------------------
    def _marginal_static(self):
        return not (self.econ.log_income_rate.time_dependent
                    or self.running_aggregate.time_dependent)

    def density_static(self):
        return not (self.econ.diffusion.time_dependent
                    or self.econ.notional_growth.time_dependent
                    or self.econ.impatience.time_dependent)

    def stock_static(self, j):
        stock = self.econ.stocks[j]
        return (self.density_static()
                and not stock.dividend_growth.time_dependent
                and not stock.dividend_rate.time_dependent
                and self._marginal_static())

    def agent_static(self, m):
        return (self.density_static() and self._marginal_static()
                and not any(a.income_share.time_dependent
                            for a in self.econ.agents))

    def reaction_identity_gap(self, t_samples, nodes):
        """Max gap between the composite reactions and their defining
        differences of raw fields (a wiring self-check, cheap)."""
        gap = 0.0
        for t in np.atleast_1d(t_samples):
            q = self.econ.notional_growth(t, nodes)
            r = self.econ.impatience(t, nodes)
            gap = max(gap, float(np.abs(
                self.density_reaction(t, nodes) - (q - r)).max()))
            for j, stock in enumerate(self.econ.stocks):
                p = stock.dividend_growth(t, nodes)
                gap = max(gap, float(np.abs(
                    self.stock_reaction(j)(t, nodes) - (p - r)).max()))
        return gap


def build_kernels(econ, weights, rel_tol=1e-13):
    w = validate_simplex(weights, econ.n_agents)
    running = AggregateUtility(econ.utilities(), w, rel_tol=rel_tol)
    terminal = AggregateUtility(econ.terminal_utilities(), w,
                                rel_tol=rel_tol)
    return PricingKernelSet(econ=econ, weights=w, running_aggregate=running,
                            terminal_aggregate=terminal)


def solve_density_surface(kernels, times, sgrid, theta=0.5):
    """Spatial factor of the measure-change martingale; must stay positive."""
    nodes = sgrid.flat_states()
    surface = solve_parabolic(
        kernels.econ.diffusion, times, sgrid,
        kernels.terminal_kernel(nodes),
        reaction=kernels.density_reaction, theta=theta,
        static=kernels.density_static())
    low = float(surface.values.min())
    if low <= 0.0:
        raise SolverError(
            f"density surface lost positivity (min {low:.3e}); refine the "
            "grid or widen the domain")
    return surface


def solve_stock_surface(kernels, j, times, sgrid, density, theta=0.5):
    """Returns (price_surface s_j, value_surface m_j)."""
    nodes = sgrid.flat_states()
    stock = kernels.econ.stocks[j]
    terminal = (kernels.terminal_kernel(nodes)
                * stock.terminal_payoff(1.0, nodes))
    m_j = solve_parabolic(
        kernels.econ.diffusion, times, sgrid, terminal,
        reaction=kernels.stock_reaction(j), source=kernels.stock_source(j),
        theta=theta, static=kernels.stock_static(j))
    s_j = GridFunction(m_j.times, sgrid, m_j.values / density.values)
    return s_j, m_j


def solve_claim_surface(kernels, times, sgrid, payoff_values, density,
                        theta=0.5):
    """Deflated value surface of a terminal claim paying ``payoff`` units of
    the numeraire: reaction beta, terminal K * payoff, divided by v."""
    nodes = sgrid.flat_states()
    terminal = kernels.terminal_kernel(nodes) * np.asarray(
        payoff_values, dtype=float).ravel()
    m_phi = solve_parabolic(
        kernels.econ.diffusion, times, sgrid, terminal,
        reaction=kernels.density_reaction, theta=theta,
        static=kernels.density_static())
    return GridFunction(m_phi.times, sgrid,
                        m_phi.values / density.values), m_phi


def numeraire_surface(kernels, density):
    """State factor of the numeraire for t < 1: v / u_c(income)."""
    nodes = density.sgrid.flat_states()
    k_levels = density.times.size
    flat = density.values.reshape(k_levels, -1)
    marg = kernels.marginal_at_income(density.times[:, None],
                                      nodes[None, :, :])
    return GridFunction(density.times, density.sgrid,
                        (flat / marg).reshape(density.values.shape))


def solve_agent_surface(kernels, m, times, sgrid, density, theta=0.5):
    """Agent m's net-trade value surface (nu_m, n_m)."""
    nodes = sgrid.flat_states()
    econ = kernels.econ

    def reaction(t, pts):
        return -econ.impatience(t, pts)

    n_m = solve_parabolic(
        econ.diffusion, times, sgrid, kernels.agent_terminal(nodes, m),
        reaction=reaction, source=kernels.agent_source(m), theta=theta,
        static=kernels.agent_static(m))
    nu_m = GridFunction(n_m.times, sgrid, n_m.values / density.values)
    return nu_m, n_m


@dataclass
class EquilibriumSolution:
    """Everything the verification and completeness layers need."""

    econ: object
    times: np.ndarray
    sgrid: object
    weights: np.ndarray
    kernels: PricingKernelSet
    density_surface: GridFunction          # v
    numeraire_state_surface: GridFunction  # v / u_c(income)
    stock_surfaces: list                   # s_j
    stock_value_surfaces: list             # m_j
    agent_surfaces: list                   # nu_m
    agent_value_surfaces: list             # n_m
    solve_result: object = None
    diagnostics: dict = field(default_factory=dict)

    # -- pathwise reconstructions -----------------------------------------
    def marginal_paths(self, primitives):
        """u_c of the aggregate income along the bundle."""
        bundle = primitives.bundle
        return self.kernels.running_aggregate.dc(
            bundle.tgrid.times[None, :], primitives.income_rate,
            bundle.states)

    def density_paths(self, primitives):
        """Measure-change martingale Y along the bundle."""
        beta_int = (primitives.notional_growth_integral
                    - primitives.impatience_integral)
        sampled = self.density_surface.sample_paths(
            primitives.bundle.tgrid.times, primitives.bundle.states)
        return np.exp(beta_int) * sampled

    def numeraire_paths(self, primitives, marginal=None):
        """Numeraire B along the bundle; terminal column equals the
        notional payoff exactly."""
        if marginal is None:
            marginal = self.marginal_paths(primitives)
        sampled = self.density_surface.sample_paths(
            primitives.bundle.tgrid.times, primitives.bundle.states)
        b = np.exp(primitives.notional_growth_integral) * sampled / marginal
        b[:, -1] = primitives.notional_terminal
        return b

    def stock_paths(self, primitives, j, numeraire=None):
        """Deflated cum-dividend stock value along the bundle."""
        bundle = primitives.bundle
        if numeraire is None:
            numeraire = self.numeraire_paths(primitives)
        alpha_int = (primitives.dividend_growth_integrals[j]
                     - primitives.notional_growth_integral)
        payout = primitives.dividend_rates[j] / numeraire
        dt = bundle.tgrid.dt
        accrued = np.zeros_like(payout)
        np.cumsum(0.5 * (payout[:, :-1] + payout[:, 1:]) * dt[None, :],
                  axis=1, out=accrued[:, 1:])
        sampled = self.stock_surfaces[j].sample_paths(bundle.tgrid.times,
                                                      bundle.states)
        return accrued + np.exp(alpha_int) * sampled

    def hedge_ratios(self, primitives, m, rank_rel_tol=1e-10):
        """Stock positions replicating agent m's net-trade value.

        Returns an array (n_paths, n_steps - 1, J): the position held on
        [t_k, t_{k+1}).  Raises CompletenessError at rank-deficient nodes.
        """
        bundle = primitives.bundle
        loadings = stock_loadings(self, primitives)      # (P, K-1, J, d)
        target = agent_target_loadings(self, primitives, m)
        return solve_hedge_systems(loadings, target, rank_rel_tol)


def _gradient_paths(surface, times, states):
    """Spatial gradient of a surface sampled along paths: (P, K, d)."""
    cols = [surface.gradient(axis).sample_paths(times, states)
            for axis in range(surface.sgrid.dimension)]
    return np.stack(cols, axis=-1)


def stock_loadings(solution, primitives, upto=-1):
    """Diffusion loadings of each deflated stock at path nodes with t < 1:
    rows e^{int alpha_j} (grad s_j . sigma), shape (P, K-1, J, d)."""
    bundle = primitives.bundle
    times = bundle.tgrid.times[:upto]
    states = bundle.states[:, :upto, :]
    sig = solution.econ.diffusion.sigma_at(times[None, :], states)
    rows = []
    for j in range(solution.econ.n_stocks):
        alpha_int = (primitives.dividend_growth_integrals[j][:, :upto]
                     - primitives.notional_growth_integral[:, :upto])
        grad = _gradient_paths(solution.stock_surfaces[j], times, states)
        load = np.einsum("pki,pkij->pkj", grad, sig)
        rows.append(np.exp(alpha_int)[..., None] * load)
    return np.stack(rows, axis=2)


def agent_target_loadings(solution, primitives, m, upto=-1):
    """Diffusion loadings of agent m's net-trade value: (P, K-1, d)."""
    bundle = primitives.bundle
    times = bundle.tgrid.times[:upto]
    states = bundle.states[:, :upto, :]
    sig = solution.econ.diffusion.sigma_at(times[None, :], states)
    grad = _gradient_paths(solution.agent_surfaces[m], times, states)
    load = np.einsum("pki,pkij->pkj", grad, sig)
    q_int = primitives.notional_growth_integral[:, :upto]
    return np.exp(-q_int)[..., None] * load


def solve_hedge_systems(loadings, target, rank_rel_tol=1e-10):
    """Solve sum_j H_j loadings_j = target at every node.

    loadings: (..., J, d); target: (..., d).  Uses the minimum-norm
    solution H = A (A' A)^{-1} target where A' stacks the loadings rows
    (exact when J = d).  Rank deficiency raises CompletenessError with
    the offending node's index.
    """
    if loadings.shape[-1] == 1:
        # single risk factor: the Gram matrix is the scalar sum of squares
        gram = np.sum(loadings[..., 0] ** 2, axis=-1)
        floor = (rank_rel_tol * np.sqrt(max(float(gram.max()), 1e-300))) ** 2
        bad = gram <= floor
        if bad.any():
            where = np.argwhere(bad)[0]
            raise CompletenessError(
                "stock loadings are rank deficient at node "
                f"{tuple(int(i) for i in where)}; market incomplete there")
        return loadings[..., 0] * (target[..., 0] / gram)[..., None]
    gram = np.einsum("...ji,...jk->...ik", loadings, loadings)
    eigs = np.linalg.eigvalsh(gram)
    scale = np.sqrt(max(float(eigs.max()), 0.0))
    bad = eigs[..., 0] <= (rank_rel_tol * max(scale, 1e-300)) ** 2
    if bad.any():
        where = np.argwhere(bad)[0]
        raise CompletenessError(
            "stock loadings are rank deficient at node "
            f"{tuple(int(i) for i in where)}; market incomplete there")
    z = np.linalg.solve(gram, target[..., None])[..., 0]
    return np.einsum("...jd,...d->...j", loadings, z)


def solve_equilibrium(econ, primitives, times, sgrid, solver_config=None,
                      theta=0.5, rel_tol=1e-13):
    """Two-step construction: equilibrium weights on the frozen bundle,
    then all pricing surfaces at those weights."""
    result = solve_weights(primitives, econ.utilities(),
                           econ.terminal_utilities(),
                           solver_config or SolverConfig())
    return build_solution(econ, times, sgrid, result, theta=theta,
                          rel_tol=rel_tol)


def build_solution(econ, times, sgrid, result, theta=0.5, rel_tol=1e-13):
    """All pricing surfaces at an already-solved weight vector."""
    times = np.asarray(times, dtype=float)
    kernels = build_kernels(econ, result.weights, rel_tol=rel_tol)
    density = solve_density_surface(kernels, times, sgrid, theta=theta)
    stocks, values = [], []
    for j in range(econ.n_stocks):
        s_j, m_j = solve_stock_surface(kernels, j, times, sgrid, density,
                                       theta=theta)
        stocks.append(s_j)
        values.append(m_j)
    agents, agent_values = [], []
    for m in range(econ.n_agents):
        nu_m, n_m = solve_agent_surface(kernels, m, times, sgrid, density,
                                        theta=theta)
        agents.append(nu_m)
        agent_values.append(n_m)
    sol = EquilibriumSolution(
        econ=econ, times=times, sgrid=sgrid,
        weights=result.weights, kernels=kernels, density_surface=density,
        numeraire_state_surface=numeraire_surface(kernels, density),
        stock_surfaces=stocks, stock_value_surfaces=values,
        agent_surfaces=agents, agent_value_surfaces=agent_values,
        solve_result=result)
    nodes = sgrid.flat_states()[:: max(1, sgrid.flat_states().shape[0] // 64)]
    sol.diagnostics["reaction_identity_gap"] = \
        kernels.reaction_identity_gap(times[:: max(1, times.size // 8)],
                                      nodes)
    return sol
