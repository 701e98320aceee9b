"""Economy primitives: agents, stocks, endowment fields, and their pathwise
evaluation.

All dividend/income processes share one multiplicative structure: a payoff
function of the terminal state scaled by the exponential of an integrated
rate.  Incomes stay positive because they are exponentials of the log-income
fields; per-agent income shares must be non-negative and sum to one, and the
last agent's share is computed as the complement so that the shares add up
exactly in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionSpec, PathBundle, path_integral
from .errors import ConfigError, PrimitiveError
from .expressions import Expr
from .reporting import ValidationReport
from .utilities import UtilityFn

_SHARE_SUM_TOL = 1e-8
_SHARE_NEG_TOL = 1e-12


@dataclass
class StockSpec:
    """One traded asset: terminal payoff F(x) scaled into the notional unit,
    a dividend-rate field, and the dividend growth-rate exponent."""

    name: str
    terminal_payoff: Expr          # F(x)
    dividend_rate: Expr            # f(t, x)
    dividend_growth: Expr          # exponent rate p(t, x)


@dataclass
class AgentSpec:
    """One agent: running and terminal utilities plus income shares."""

    name: str
    utility: UtilityFn             # running utility u^m
    terminal_utility: UtilityFn    # terminal utility U^m
    income_share: Expr             # share of the income rate, in [0, 1]
    terminal_share: Expr           # share of terminal endowment, in [0, 1]


@dataclass
class EconomySpec:
    """Complete description of the exchange economy."""

    diffusion: DiffusionSpec
    notional_payoff: Expr          # G(x): terminal scale of the notional
    notional_growth: Expr          # q(t, x)
    impatience: Expr               # short-rate-like discount exponent r(t, x)
    log_terminal_endowment: Expr   # H(x): terminal endowment is e^H
    log_income_rate: Expr          # h(t, x): income rate is e^h
    stocks: list = field(default_factory=list)
    agents: list = field(default_factory=list)

    def __post_init__(self):
        if not self.agents:
            raise ConfigError("economy needs at least one agent")
        if not self.stocks:
            raise ConfigError("economy needs at least one stock")

    @property
    def n_agents(self):
        return len(self.agents)

    @property
    def n_stocks(self):
        return len(self.stocks)

    def utilities(self):
        return [a.utility for a in self.agents]

    def terminal_utilities(self):
        return [a.terminal_utility for a in self.agents]

    def income_shares_at(self, t, x):
        """Stacked income shares (..., M); last agent takes the complement."""
        return self._shares_at([a.income_share for a in self.agents], t, x,
                               "income_share")

    def terminal_shares_at(self, x):
        return self._shares_at([a.terminal_share for a in self.agents],
                               1.0, x, "terminal_share")

    def _shares_at(self, exprs, t, x, label):
        shares = np.stack([e(t, x) for e in exprs], axis=-1)
        total = shares.sum(axis=-1)
        if np.abs(total - 1.0).max() > _SHARE_SUM_TOL:
            raise PrimitiveError(
                f"{label}s sum to {float(total.ravel()[0]):.9g} != 1 "
                "somewhere on the evaluation set")
        if shares.min() < -_SHARE_NEG_TOL:
            raise PrimitiveError(f"negative {label} encountered")
        shares[..., -1] = 1.0 - shares[..., :-1].sum(axis=-1)
        return shares


@dataclass
class PrimitivePaths:
    """All primitive processes evaluated along one path bundle.

    Shapes: per-path terminal quantities are (P,), running quantities are
    (P, K); stacked per-stock arrays are (J, P, ...) and per-agent arrays
    (M, P, ...).  ``discount`` is exp(-integral of the impatience rate).
    """

    bundle: PathBundle
    notional_terminal: np.ndarray          # Psi, (P,)
    dividend_rates: np.ndarray             # theta, (J, P, K)
    dividend_terminals: np.ndarray         # Theta, (J, P)
    dividend_growth_integrals: np.ndarray  # (J, P, K)
    income_rate: np.ndarray                # lambda, (P, K)
    income_terminal: np.ndarray            # Lambda, (P,)
    agent_income_rates: np.ndarray         # (M, P, K)
    agent_income_terminals: np.ndarray     # (M, P)
    impatience_integral: np.ndarray        # (P, K)
    notional_growth_integral: np.ndarray   # (P, K)

    @property
    def n_paths(self):
        return self.bundle.n_paths

    @property
    def discount(self):
        return np.exp(-self.impatience_integral)


def evaluate_primitives(econ, bundle):
    """Evaluate every primitive process along the bundle, enforcing the
    positivity the model requires (notional payoff and incomes)."""
    times = bundle.tgrid.times[None, :]
    states = bundle.states
    x1 = bundle.terminal

    q_int = path_integral(bundle, econ.notional_growth)
    r_int = path_integral(bundle, econ.impatience)

    g_term = econ.notional_payoff(1.0, x1)
    if not np.all(g_term > 0):
        bad = int(np.argmin(g_term))
        raise PrimitiveError(
            f"notional payoff non-positive on path {bad} "
            f"(value {float(g_term[bad]):.6g})")
    psi = g_term * np.exp(q_int[:, -1])

    theta = np.empty((econ.n_stocks,) + states.shape[:2])
    theta_term = np.empty((econ.n_stocks, states.shape[0]))
    growth_ints = np.empty_like(theta)
    for j, stock in enumerate(econ.stocks):
        p_int = path_integral(bundle, stock.dividend_growth)
        growth_ints[j] = p_int
        rate = stock.dividend_rate(times, states)
        theta[j] = np.broadcast_to(rate, states.shape[:2]) * np.exp(p_int)
        theta_term[j] = (g_term * stock.terminal_payoff(1.0, x1)
                         * np.exp(p_int[:, -1]))

    with np.errstate(over="ignore"):        # overflow handled just below
        income = np.exp(econ.log_income_rate(times, states))
        income_term = np.exp(econ.log_terminal_endowment(1.0, x1))
    income = np.broadcast_to(income, states.shape[:2])
    if not (np.isfinite(income).all() and np.isfinite(income_term).all()):
        raise PrimitiveError("income rate overflowed along a path")

    shares_t = np.moveaxis(econ.income_shares_at(times, states), -1, 0)
    shares_T = np.moveaxis(econ.terminal_shares_at(x1), -1, 0)
    agent_income = shares_t * income[None]
    agent_income_term = shares_T * income_term[None]

    return PrimitivePaths(
        bundle=bundle,
        notional_terminal=psi,
        dividend_rates=theta,
        dividend_terminals=theta_term,
        dividend_growth_integrals=growth_ints,
        income_rate=income,
        income_terminal=income_term,
        agent_income_rates=agent_income,
        agent_income_terminals=agent_income_term,
        impatience_integral=r_int,
        notional_growth_integral=q_int,
    )


def _payoff_jacobians(econ, nodes):
    """Terminal-payoff Jacobian (N, J, d) by central differences."""
    n, d = nodes.shape
    jac = np.empty((n, econ.n_stocks, d))
    for j, stock in enumerate(econ.stocks):
        for axis in range(d):
            h = 1e-6 * (1.0 + np.abs(nodes[:, axis]))
            hi = nodes.copy()
            lo = nodes.copy()
            hi[:, axis] += h
            lo[:, axis] -= h
            jac[:, j, axis] = (stock.terminal_payoff(1.0, hi)
                               - stock.terminal_payoff(1.0, lo)) / (2.0 * h)
    return jac


def validate_assumptions(econ, sgrid, tgrid, bundle=None,
                         rank_rel_tol=1e-8, rank_fail_fraction=1e-3,
                         max_time_samples=9):
    """Structural checks on the economy over the grid (and optionally along
    a simulated bundle): payoff-map rank, share consistency, positivity,
    and empirical growth exponents for the unbounded fields."""
    d = sgrid.dimension
    report = ValidationReport(name="economy-assumptions")
    if econ.n_stocks < d:
        raise ConfigError(
            f"{econ.n_stocks} stocks cannot span {d} risk factors")

    nodes = sgrid.flat_states()
    jac = _payoff_jacobians(econ, nodes)
    svals = np.linalg.svd(jac, compute_uv=False)
    frob = np.sqrt(np.sum(jac ** 2, axis=(1, 2)))
    threshold = rank_rel_tol * max(float(np.median(frob)), 1e-300)
    fail_fraction = float(np.mean(svals[:, -1] <= threshold))
    report.metrics["payoff_rank_min_singular"] = float(svals[:, -1].min())
    report.metrics["payoff_rank_threshold"] = threshold
    report.metrics["payoff_rank_fail_fraction"] = fail_fraction
    if fail_fraction > rank_fail_fraction:
        report.flag(
            f"terminal payoff map is rank deficient on "
            f"{100 * fail_fraction:.2f}% of grid nodes")

    g_vals = econ.notional_payoff(1.0, nodes)
    if not np.all(g_vals > 0):
        report.flag("notional payoff must be positive on the grid")

    # empirical growth exponents: log |field| relative to 1 + |x|
    xnorm = 1.0 + np.abs(nodes).sum(axis=1)

    def log_ratio(vals):
        return float((np.log(np.maximum(np.abs(vals), 1e-300))
                      / xnorm).max())

    report.metrics["growth_notional_payoff"] = log_ratio(g_vals)
    report.metrics["growth_payoff_gradient"] = log_ratio(
        np.abs(jac).max(axis=(1, 2)))
    h_term = econ.log_terminal_endowment(1.0, nodes)
    report.metrics["growth_log_terminal_endowment"] = float(
        (np.abs(h_term) / xnorm).max())

    k = max(1, (tgrid.n_steps - 1) // max(1, max_time_samples - 1))
    t_samples = tgrid.times[::k]
    max_rate = 0.0
    max_log_income = 0.0
    max_div = 0.0
    for t in t_samples:
        max_rate = max(max_rate, float(np.abs(econ.impatience(t, nodes)).max()))
        max_log_income = max(max_log_income, float(
            (np.abs(econ.log_income_rate(t, nodes)) / xnorm).max()))
        for stock in econ.stocks:
            max_div = max(max_div, log_ratio(stock.dividend_rate(t, nodes)))
        try:
            econ.income_shares_at(t, nodes)
        except PrimitiveError as exc:
            report.flag(f"t={t:.6g}: {exc}")
    report.metrics["max_abs_impatience"] = max_rate
    report.metrics["growth_log_income_rate"] = max_log_income
    report.metrics["growth_dividend_rate"] = max_div
    try:
        econ.terminal_shares_at(nodes)
    except PrimitiveError as exc:
        report.flag(str(exc))

    if bundle is not None:
        prims = evaluate_primitives(econ, bundle)
        dt = bundle.tgrid.dt
        running = np.sum(0.5 * (prims.agent_income_rates[:, :, :-1]
                                + prims.agent_income_rates[:, :, 1:])
                         * dt[None, None, :], axis=2)
        total = running + prims.agent_income_terminals
        frac_positive = np.mean(total > 0, axis=1)
        report.metrics["agent_income_positive_fraction"] = frac_positive
        if np.any(frac_positive < 1.0):
            worst = int(np.argmin(frac_positive))
            report.flag(
                f"agent '{econ.agents[worst].name}' has zero total income "
                f"on {100 * (1 - float(frac_positive[worst])):.3f}% of paths")
    return report
