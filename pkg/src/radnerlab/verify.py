"""Equilibrium verification: does the constructed solution actually clear,
satisfy first-order conditions, respect budgets, translate between the
static and dynamic price systems, and price stocks as martingales?

Every check is a statistic with an explicit tolerance.  Monte Carlo checks
use 3 standard errors plus a small absolute floor covering discretization
bias (the floor is what lets exactly-deterministic economies, where the SE
degenerates to zero, pass on their tiny PDE bias while a genuinely biased
input still fails by orders of magnitude).

``run_suite`` additionally re-runs selected checks on deliberately corrupted
inputs (scaled allocations, inflated incomes, a rescaled numeraire, a price
surface with a linear drift added) and records them as negative controls:
a healthy suite has all positive checks passing and all controls failing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reporting import CheckResult, VerificationSuiteResult


@dataclass
class VerifyConfig:
    clearing_tol: float = 1e-8
    foc_tol: float = 1e-8
    pde_rel_tol: float = 2e-3       # discretization/interpolation allowance
    martingale_pairs: tuple = ((0.25, 0.75),)
    martingale_bins: int = 8
    min_bin_count: int = 25
    bin_pass_fraction: float = 0.9


@dataclass
class _Pathwork:
    """All pathwise arrays the checks share, computed once."""

    times: np.ndarray
    dt: np.ndarray
    marginal: np.ndarray         # (P, K) aggregate u_c at income
    marginal_terminal: np.ndarray
    allocations: np.ndarray      # (P, K, M)
    allocations_terminal: np.ndarray
    density: np.ndarray          # (P, K) measure-change martingale Y
    density_origin: float        # Y_0 from the PDE surface
    numeraire: np.ndarray        # (P, K), terminal = notional
    stocks: list                 # J arrays (P, K)
    state_price: np.ndarray      # (P, K) discounted marginal utility
    state_price_terminal: np.ndarray


def prepare_paths(solution, primitives):
    bundle = primitives.bundle
    times = bundle.tgrid.times
    agg = solution.kernels.running_aggregate
    agg_T = solution.kernels.terminal_aggregate
    marg, alloc = agg.marginal_and_allocations(
        times[None, :], primitives.income_rate, bundle.states)
    marg_T, alloc_T = agg_T.marginal_and_allocations(
        1.0, primitives.income_terminal, bundle.terminal)
    density = solution.density_paths(primitives)
    numeraire = solution.numeraire_paths(primitives, marg)
    stocks = [solution.stock_paths(primitives, j, numeraire)
              for j in range(solution.econ.n_stocks)]
    disc = primitives.discount
    return _Pathwork(
        times=times,
        dt=bundle.tgrid.dt,
        marginal=marg,
        marginal_terminal=marg_T,
        allocations=alloc,
        allocations_terminal=alloc_T,
        density=density,
        density_origin=float(solution.density_surface.interpolate(
            0.0, solution.econ.diffusion.x0[None, :])[0]),
        numeraire=numeraire,
        stocks=stocks,
        state_price=disc * marg,
        state_price_terminal=disc[:, -1] * marg_T,
    )


def check_clearing(work, primitives, tol=1e-8):
    """Allocations add up to the aggregate income at every node."""
    total = work.allocations.sum(axis=-1)
    rel = np.abs(total - primitives.income_rate) / primitives.income_rate
    total_T = work.allocations_terminal.sum(axis=-1)
    rel_T = np.abs(total_T - primitives.income_terminal) \
        / primitives.income_terminal
    stat = max(float(rel.max()), float(rel_T.max()))
    return CheckResult(name="clearing", statistic=stat, tolerance=tol,
                       passed=stat <= tol)


def check_optimality(solution, work, primitives, tol=1e-8):
    """Weighted marginal utilities coincide with the planner marginal."""
    econ = solution.econ
    w = solution.weights
    stat = 0.0
    times = work.times[None, :]
    states = primitives.bundle.states
    x1 = primitives.bundle.terminal
    for m in range(econ.n_agents):
        if w[m] <= 0.0:
            continue
        own = w[m] * econ.agents[m].utility.dc(
            times, work.allocations[..., m], states)
        gap = np.abs(own - work.marginal) / work.marginal
        own_T = w[m] * econ.agents[m].terminal_utility.dc(
            1.0, work.allocations_terminal[..., m], x1)
        gap_T = np.abs(own_T - work.marginal_terminal) \
            / work.marginal_terminal
        stat = max(stat, float(gap.max()), float(gap_T.max()))
    return CheckResult(name="optimality", statistic=stat, tolerance=tol,
                       passed=stat <= tol)


def check_budget(solution, work, primitives, pde_rel_tol=2e-3):
    """Each agent's net trade has zero value under the martingale measure.

    Net consumption purchases are deflated by the numeraire, weighted by
    the terminal density (change of measure), and averaged; the tolerance
    is 3 SE plus a discretization floor scaled by the agent's gross
    deflated expenditure.
    """
    weights_q = work.density[:, -1] / work.density_origin
    dt = work.dt
    results = []
    details = []
    for m in range(solution.econ.n_agents):
        net = (work.allocations[..., m]
               - primitives.agent_income_rates[m]) / work.numeraire
        gross = (work.allocations[..., m]
                 + primitives.agent_income_rates[m]) / work.numeraire
        run = np.sum(0.5 * (net[:, :-1] + net[:, 1:]) * dt[None, :], axis=1)
        run_gross = np.sum(0.5 * (gross[:, :-1] + gross[:, 1:])
                           * dt[None, :], axis=1)
        lump = (work.allocations_terminal[..., m]
                - primitives.agent_income_terminals[m]) \
            / work.numeraire[:, -1]
        lump_gross = (work.allocations_terminal[..., m]
                      + primitives.agent_income_terminals[m]) \
            / work.numeraire[:, -1]
        sample = weights_q * (run + lump)
        mean = float(sample.mean())
        se = float(sample.std(ddof=1) / np.sqrt(sample.size))
        scale = float(np.mean(weights_q * (run_gross + lump_gross)))
        tol = 3.0 * se + pde_rel_tol * abs(scale)
        results.append(abs(mean) <= tol)
        details.append({"agent": m, "mean": mean, "se": se,
                        "tolerance": tol})
    worst = max(details, key=lambda row: abs(row["mean"]) / row["tolerance"])
    return CheckResult(name="budget", statistic=abs(worst["mean"]),
                       tolerance=worst["tolerance"], se=worst["se"],
                       passed=all(results), detail={"agents": details})


def check_ad_radner_translation(work, primitives, pde_rel_tol=2e-3):
    """Static and dynamic price systems agree.

    Pathwise: state price times numeraire equals the density martingale (to
    interpolation tolerance; the terminal column is a genuine cross-check
    because the numeraire ends at the notional payoff exactly while the
    density comes from the backward surface).  Globally: the Monte Carlo
    value of the terminal notional payout under the state price matches the
    surface value at the origin within 3 SE plus the same allowance.
    """
    prod = work.state_price * work.numeraire
    prod[:, -1] = work.state_price_terminal * work.numeraire[:, -1]
    rel = np.abs(prod - work.density) / np.abs(work.density)
    path_stat = float(rel.max())

    paid = work.state_price_terminal * primitives.notional_terminal
    mean = float(paid.mean())
    se = float(paid.std(ddof=1) / np.sqrt(paid.size))
    origin_gap = abs(mean - work.density_origin)
    origin_tol = 3.0 * se + pde_rel_tol * abs(work.density_origin)

    passed = path_stat <= pde_rel_tol and origin_gap <= origin_tol
    return CheckResult(
        name="ad_radner_translation", statistic=path_stat,
        tolerance=pde_rel_tol, se=se, passed=passed,
        detail={"normalization_mc": mean,
                "normalization_surface": work.density_origin,
                "normalization_gap": origin_gap,
                "normalization_tol": origin_tol})


def check_martingale(work, primitives, config=None):
    """Deflated cum-dividend stock values are martingales under the
    equivalent measure: conditional means of measure-weighted increments
    vanish bin-by-bin over the starting state."""
    config = config or VerifyConfig()
    x_states = primitives.bundle.states
    results = []
    all_pass = []
    for pair in config.martingale_pairs:
        k1 = int(np.searchsorted(work.times, pair[0]))
        k2 = int(np.searchsorted(work.times, pair[1]))
        k1 = min(max(k1, 0), work.times.size - 2)
        k2 = min(max(k2, k1 + 1), work.times.size - 1)
        weights_q = work.density[:, k2] / work.density[:, k1]
        anchor = x_states[:, k1, 0]
        edges = np.quantile(anchor, np.linspace(0, 1,
                                                config.martingale_bins + 1))
        which = np.clip(np.searchsorted(edges, anchor, side="right") - 1,
                        0, config.martingale_bins - 1)
        for j, s_paths in enumerate(work.stocks):
            floor = config.pde_rel_tol * float(
                np.sqrt(np.mean(s_paths[:, k1] ** 2)))
            incr = weights_q * (s_paths[:, k2] - s_paths[:, k1])
            occupied = 0
            passing = 0
            for b in range(config.martingale_bins):
                sel = incr[which == b]
                if sel.size < config.min_bin_count:
                    continue
                occupied += 1
                mean = float(sel.mean())
                se = float(sel.std(ddof=1) / np.sqrt(sel.size))
                if abs(mean) <= 3.0 * se + floor:
                    passing += 1
            frac = passing / occupied if occupied else 1.0
            all_pass.append(frac >= config.bin_pass_fraction)
            results.append({"stock": j, "t1": float(work.times[k1]),
                            "t2": float(work.times[k2]),
                            "occupied_bins": occupied,
                            "passing_bins": passing,
                            "pass_fraction": frac})
    worst = min(r["pass_fraction"] for r in results)
    return CheckResult(name="martingale", statistic=1.0 - worst,
                       tolerance=1.0 - config.bin_pass_fraction,
                       passed=all(all_pass), detail={"combinations": results})


def _corrupt(work, allocations_scale=None, numeraire_scale=None,
             stock_drift=None):
    import copy
    twin = copy.copy(work)
    if allocations_scale is not None:
        twin.allocations = work.allocations * allocations_scale
        twin.allocations_terminal = (work.allocations_terminal
                                     * allocations_scale)
    if numeraire_scale is not None:
        twin.numeraire = work.numeraire * numeraire_scale
    if stock_drift is not None:
        twin.stocks = [s + d * work.times[None, :]
                       for s, d in zip(work.stocks, stock_drift)]
    return twin


def _martingale_control_drifts(work, config):
    """Per-stock drift rates sized off the martingale check's own rejection
    threshold (3 SE + floor over the first time pair), so the biased twin
    fails with a 3x margin at any path count or stock scale."""
    pair = config.martingale_pairs[0]
    k1 = int(np.searchsorted(work.times, pair[0]))
    k2 = int(np.searchsorted(work.times, pair[1]))
    k1 = min(max(k1, 0), work.times.size - 2)
    k2 = min(max(k2, k1 + 1), work.times.size - 1)
    dt_pair = work.times[k2] - work.times[k1]
    weights_q = work.density[:, k2] / work.density[:, k1]
    bin_size = max(work.density.shape[0] // config.martingale_bins, 1)
    drifts = []
    for s_paths in work.stocks:
        floor = config.pde_rel_tol * float(
            np.sqrt(np.mean(s_paths[:, k1] ** 2)))
        incr = weights_q * (s_paths[:, k2] - s_paths[:, k1])
        se = float(incr.std(ddof=1)) / np.sqrt(bin_size)
        drifts.append(3.0 * (3.0 * se + floor) / dt_pair)
    return drifts


def run_suite(solution, primitives, config=None):
    """All checks plus their negative controls on one solved scenario."""
    config = config or VerifyConfig()
    work = prepare_paths(solution, primitives)

    checks = [
        check_clearing(work, primitives, config.clearing_tol),
        check_optimality(solution, work, primitives, config.foc_tol),
        check_budget(solution, work, primitives, config.pde_rel_tol),
        check_ad_radner_translation(work, primitives, config.pde_rel_tol),
        check_martingale(work, primitives, config),
    ]

    scaled = _corrupt(work, allocations_scale=1.01)
    rich = copy_income_scaled(primitives, 1.05)
    controls = [
        _renamed(check_clearing(scaled, primitives, config.clearing_tol),
                 "clearing_control"),
        _renamed(check_optimality(solution, scaled, primitives,
                                  config.foc_tol), "optimality_control"),
        _renamed(check_budget(solution, work, rich, config.pde_rel_tol),
                 "budget_control"),
        _renamed(check_ad_radner_translation(
            _corrupt(work, numeraire_scale=1.01), primitives,
            config.pde_rel_tol), "ad_radner_control"),
        _renamed(check_martingale(
            _corrupt(work, stock_drift=_martingale_control_drifts(
                work, config)), primitives, config), "martingale_control"),
    ]
    return VerificationSuiteResult(checks=checks, negative_controls=controls)


def _renamed(check, name):
    check.name = name
    return check


def copy_income_scaled(primitives, factor, agent=0):
    """Corrupted twin of the primitives: one agent's income inflated."""
    import copy
    twin = copy.copy(primitives)
    rates = primitives.agent_income_rates.copy()
    terms = primitives.agent_income_terminals.copy()
    rates[agent] = rates[agent] * factor
    terms[agent] = terms[agent] * factor
    twin.agent_income_rates = rates
    twin.agent_income_terminals = terms
    return twin
