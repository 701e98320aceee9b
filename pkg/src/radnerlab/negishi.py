"""Planner-weight interpolation: the excess-expenditure map and its root.

For a candidate weight vector w the planner allocates the aggregate income
stream optimally; agent m's excess expenditure is the expected discounted
marginal-utility value of (allocation - income), accumulated over running
consumption and the terminal lump.  A weight vector is an equilibrium iff
every agent's excess is zero.  By construction the excesses sum to zero
pathwise (allocations and incomes both add up to the aggregate), which the
solver monitors as a quadrature/splitter health check.

The root-find is a damped Newton method on the first M-1 simplex coordinates
with a forward-difference Jacobian, common random numbers (one frozen path
bundle per solve), clip-to-interior safeguarding, and a bisection fallback
for two-agent economies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryError, ConfigError, NonConvergence
from .utilities import AggregateUtility

_CLIP_FLOOR = 1e-10


def validate_simplex(w, n_agents):
    w = np.asarray(w, dtype=float)
    if w.shape != (n_agents,):
        raise ConfigError(f"weight vector must have length {n_agents}")
    if not np.isfinite(w).all() or np.any(w < 0):
        raise ConfigError("weights must be finite and non-negative")
    if abs(float(w.sum()) - 1.0) > 1e-8:
        raise ConfigError("weights must sum to one")
    return w


def pareto_allocation(utilities, w, t, total, x, rel_tol=1e-13):
    """Optimal allocation of ``total`` among agents at weights w.

    Returns an array with one trailing column per agent; zero-weight agents
    consume zero.
    """
    w = validate_simplex(w, len(utilities))
    agg = AggregateUtility(utilities, w, rel_tol=rel_tol)
    return agg.allocate(t, total, x)


@dataclass
class ExcessReport:
    """Monte Carlo estimate of the excess-expenditure map at one weight."""

    weights: np.ndarray
    phi: np.ndarray            # (M,) estimates
    se: np.ndarray             # (M,) standard errors
    n_paths: int
    pathwise_sum_max: float    # max over paths of |sum_m phi_m|, pre-mean

    @property
    def max_abs(self):
        return float(np.abs(self.phi).max())


def excess_map(w, primitives, utilities, terminal_utilities, rel_tol=1e-13):
    """Evaluate the excess-expenditure map at weights w on a frozen bundle."""
    w = validate_simplex(w, len(utilities))
    bundle = primitives.bundle
    times = bundle.tgrid.times
    states = bundle.states
    x1 = bundle.terminal

    running_agg = AggregateUtility(utilities, w, rel_tol=rel_tol)
    terminal_agg = AggregateUtility(terminal_utilities, w, rel_tol=rel_tol)

    marg, alloc = running_agg.marginal_and_allocations(
        times[None, :], primitives.income_rate, states)
    marg_T, alloc_T = terminal_agg.marginal_and_allocations(
        1.0, primitives.income_terminal, x1)

    disc = primitives.discount                   # (P, K)
    disc_T = disc[:, -1]
    dt = bundle.tgrid.dt

    m_count = len(utilities)
    per_path = np.empty((m_count, bundle.n_paths))
    for m in range(m_count):
        gap = alloc[..., m] - primitives.agent_income_rates[m]
        integrand = disc * marg * gap
        running = np.sum(0.5 * (integrand[:, :-1] + integrand[:, 1:])
                         * dt[None, :], axis=1)
        lump = disc_T * marg_T * (alloc_T[..., m]
                                  - primitives.agent_income_terminals[m])
        per_path[m] = running + lump

    phi = per_path.mean(axis=1)
    se = per_path.std(axis=1, ddof=1) / np.sqrt(bundle.n_paths)
    return ExcessReport(
        weights=w,
        phi=phi,
        se=se,
        n_paths=bundle.n_paths,
        pathwise_sum_max=float(np.abs(per_path.sum(axis=0)).max()),
    )


@dataclass
class StatePricePath:
    """Pathwise state-price process in marginal-utility units.

    ``running`` holds the discounted marginal utility of the aggregate
    income rate at every node (the t<1 branch, with the last column its
    left limit at t=1); ``terminal`` is the terminal lump branch.
    """

    running: np.ndarray        # (P, K)
    terminal: np.ndarray       # (P,)
    normalization: float       # E[terminal * notional]
    normalization_se: float


def state_price(w, primitives, utilities, terminal_utilities, rel_tol=1e-13):
    """State-price process at weights w along the frozen bundle."""
    w = validate_simplex(w, len(utilities))
    bundle = primitives.bundle
    running_agg = AggregateUtility(utilities, w, rel_tol=rel_tol)
    terminal_agg = AggregateUtility(terminal_utilities, w, rel_tol=rel_tol)
    marg = running_agg.dc(bundle.tgrid.times[None, :],
                          primitives.income_rate, bundle.states)
    marg_T = terminal_agg.dc(1.0, primitives.income_terminal, bundle.terminal)
    disc = primitives.discount
    running = disc * marg
    terminal = disc[:, -1] * marg_T
    paid = terminal * primitives.notional_terminal
    return StatePricePath(
        running=running,
        terminal=terminal,
        normalization=float(paid.mean()),
        normalization_se=float(paid.std(ddof=1) / np.sqrt(paid.size)),
    )


@dataclass
class SolverConfig:
    abs_tol: float = 1e-9
    max_iter: int = 40
    fd_step: float = 1e-7
    max_backtracks: int = 8
    start: object = None            # optional (M,) start
    multistart: list = field(default_factory=list)
    rel_tol: float = 1e-13          # splitter tolerance


@dataclass
class SolveResult:
    weights: np.ndarray
    residual: float
    se: np.ndarray
    n_iter: int
    converged: bool
    trace: list                    # rows: dict(iter, weights, residual, step)


def _project(v, m_count):
    """Free coordinates -> full simplex point, clipped to the interior."""
    w = np.empty(m_count)
    w[:-1] = v
    w[-1] = 1.0 - v.sum()
    clipped = np.any(w < _CLIP_FLOOR)
    w = np.clip(w, _CLIP_FLOOR, None)
    return w / w.sum(), clipped


def solve_weights(primitives, utilities, terminal_utilities, config=None):
    """Find the interior weight vector zeroing the excess-expenditure map.

    Uses common random numbers: every excess evaluation reuses the bundle
    frozen inside ``primitives``, so the map seen by the solver is a smooth
    deterministic function and Newton steps are meaningful.

    Raises BoundaryError when iterates keep collapsing onto the simplex
    boundary and NonConvergence (carrying the best iterate and full trace)
    at the iteration cap.
    """
    config = config or SolverConfig()
    m_count = len(utilities)
    if m_count == 1:
        report = excess_map(np.array([1.0]), primitives, utilities,
                            terminal_utilities, config.rel_tol)
        trace = [{"iter": 0, "weights": (1.0,),
                  "residual": report.max_abs, "step": 0.0,
                  "pathwise_sum_max": report.pathwise_sum_max}]
        return SolveResult(np.array([1.0]), report.max_abs, report.se, 1,
                           True, trace)

    starts = []
    if config.start is not None:
        starts.append(validate_simplex(config.start, m_count))
    starts.extend(validate_simplex(s, m_count) for s in config.multistart)
    if not starts:
        starts.append(np.full(m_count, 1.0 / m_count))

    def phi_of(v):
        w, clipped = _project(v, m_count)
        rep = excess_map(w, primitives, utilities, terminal_utilities,
                         config.rel_tol)
        return rep, w, clipped

    last_error = None
    for start in starts:
        try:
            return _newton_run(phi_of, start, m_count, config)
        except (NonConvergence, BoundaryError) as exc:
            last_error = exc
    raise last_error


def _newton_run(phi_of, start, m_count, config):
    v = np.asarray(start[:-1], dtype=float)
    trace = []
    clip_streak = 0
    bracket = None                 # two-agent bisection fallback on w_1

    report, w, clipped = phi_of(v)
    for it in range(config.max_iter):
        resid = report.max_abs
        trace.append({
            "iter": it,
            "weights": tuple(float(x) for x in w),
            "residual": resid,
            "step": 1.0,
            "pathwise_sum_max": report.pathwise_sum_max,
        })
        tol = max(config.abs_tol, 3.0 * float(report.se.max()))
        if resid <= tol:
            return SolveResult(w, resid, report.se, it + 1, True, trace)
        clip_streak = clip_streak + 1 if clipped else 0
        if clip_streak >= 3:
            raise BoundaryError(
                "weight iterates keep collapsing onto the simplex boundary; "
                "check that every agent holds income on enough paths")
        if m_count == 2:
            sign = np.sign(report.phi[0])
            if sign > 0:
                # agent 1 over-spends: weight 1 too high
                bracket = (bracket[0], v[0]) if bracket else (0.0, v[0])
            elif sign < 0:
                bracket = (v[0], bracket[1]) if bracket else (v[0], 1.0)

        free = report.phi[:-1]
        jac = np.empty((m_count - 1, m_count - 1))
        for i in range(m_count - 1):
            step = config.fd_step * max(1.0, abs(v[i]))
            v_pert = v.copy()
            v_pert[i] += step
            pert_rep, _, _ = phi_of(v_pert)
            jac[:, i] = (pert_rep.phi[:-1] - free) / step
        try:
            delta = np.linalg.solve(jac, -free)
        except np.linalg.LinAlgError:
            delta, *_ = np.linalg.lstsq(jac, -free, rcond=None)

        scale = 1.0
        improved = False
        for _ in range(config.max_backtracks + 1):
            cand_rep, cand_w, cand_clip = phi_of(v + scale * delta)
            if cand_rep.max_abs < resid * (1.0 - 1e-4 * scale):
                improved = True
                break
            scale *= 0.5
        if improved:
            v = v + scale * delta
            report, w, clipped = cand_rep, cand_w, cand_clip
            trace[-1]["step"] = scale
        elif m_count == 2 and bracket and bracket[1] > bracket[0]:
            v = np.array([0.5 * (bracket[0] + bracket[1])])
            report, w, clipped = phi_of(v)
            trace[-1]["step"] = 0.0
        else:
            report, w, clipped = cand_rep, cand_w, cand_clip
            v = v + scale * delta
            trace[-1]["step"] = scale

    best = trace[-1]
    raise NonConvergence(
        f"weight solver stopped after {config.max_iter} iterations "
        f"with residual {best['residual']:.3e}",
        best=np.asarray(best["weights"]), trace=trace)
