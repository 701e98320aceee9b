"""Utility functions, consumption splitting, and weighted aggregation.

The central operation is the sup-convolution: given utilities u1, u2 and a
total consumption c > 0, find the split c = c1 + c2 equalizing marginal
utilities.  Because marginal utilities are strictly decreasing with Inada
limits, the split is the unique root of

    F(y) = inv_marginal_1(y) + inv_marginal_2(y) - c = 0

in the *marginal level* y, with the bracket y in [max_i u_i'(c),
max_i u_i'(c/M)] valid by monotonicity.  Solving in y-space makes the
M-component aggregation a single flat root-find (inverse marginals add), and
for CRRA families the inverse marginal is closed form, so the solve
vectorizes over whole path x time arrays.

Composite derivatives follow the envelope identities: the composite marginal
is y itself, and the ratios u_c/u_cc, u_ct/u_cc and u_cx/u_cc are additive
across components at the optimal split.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, EvaluationError, SplitterError
from .expressions import Constant, Expr
from .reporting import ValidationReport


def _poly_eval(coeffs, t):
    out = np.zeros_like(np.asarray(t, dtype=float))
    for c in reversed(coeffs):
        out = out * t + c
    return out


def _poly_deriv(coeffs, t):
    out = np.zeros_like(np.asarray(t, dtype=float))
    for k in reversed(range(1, len(coeffs))):
        out = out * t + k * coeffs[k]
    return out


class UtilityFn:
    """Time/state-modulated utility of consumption.

    Subclasses implement value/dc/dcc/dct/dcx with broadcasting over
    ``t`` (scalar or array), ``c`` (array) and states ``x`` of shape
    (..., d); dcx returns one column per state axis.
    """

    time_dependent = False

    def value(self, t, c, x):
        raise NotImplementedError

    def dc(self, t, c, x):
        raise NotImplementedError

    def dcc(self, t, c, x):
        raise NotImplementedError

    def dct(self, t, c, x):
        raise NotImplementedError

    def dcx(self, t, c, x):
        raise NotImplementedError

    def inverse_marginal_fn(self, t, x):
        """Return a closure y -> (c, dc/dy) inverting u_c(t, ., x).

        Generic fallback: monotone bracket expansion plus bisection in
        log-consumption.  Families with closed-form inverses override this.
        """
        def inv(y):
            c = _invert_marginal_numeric(self, t, y, x)
            return c, 1.0 / self.dcc(t, c, x)
        return inv


def _invert_marginal_numeric(u, t, y, x, expansions=60, bisections=90):
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(np.shape(t), y.shape, np.shape(x)[:-1])
    lo = np.full(shape, 1.0)
    hi = np.full(shape, 1.0)
    for _ in range(expansions):
        need = u.dc(t, lo, x) < y
        if not need.any():
            break
        lo = np.where(need, lo * 1e-2, lo)
    else:
        raise SplitterError(
            "marginal utility stays below the target level as c -> 0; "
            "the utility violates the Inada condition at zero")
    for _ in range(expansions):
        need = u.dc(t, hi, x) > y
        if not need.any():
            break
        hi = np.where(need, hi * 1e2, hi)
    else:
        raise SplitterError(
            "marginal utility stays above the target level as c -> inf; "
            "the utility violates the Inada condition at infinity")
    llo, lhi = np.log(lo), np.log(hi)
    for _ in range(bisections):
        mid = 0.5 * (llo + lhi)
        high = u.dc(t, np.exp(mid), x) > y   # marginal too high -> c too low
        llo = np.where(high, mid, llo)
        lhi = np.where(high, lhi, mid)
    return np.exp(0.5 * (llo + lhi))


class CRRAUtility(UtilityFn):
    """Constant relative risk aversion with impatience and state modulation:

        u(t, c, x) = exp(nu(t)) * factor(x) * (c^(1-a) - 1) / (1 - a)

    with the logarithmic limit exp(nu(t)) * factor(x) * ln(c) at a = 1.
    ``impatience`` lists the coefficients of the polynomial nu(t) and
    ``state_factor`` is a catalog expression (must stay positive).
    """

    def __init__(self, risk_aversion, impatience=(0.0,), state_factor=None):
        self.risk_aversion = float(risk_aversion)
        if not self.risk_aversion > 0:
            raise ConfigError("risk_aversion must be positive")
        self.impatience = [float(c) for c in impatience] or [0.0]
        if state_factor is None:
            state_factor = Constant(1.0)
        if not isinstance(state_factor, Expr):
            raise ConfigError("state_factor must be a catalog expression")
        self.state_factor = state_factor

    @property
    def time_dependent(self):
        return (any(c != 0.0 for c in self.impatience[1:])
                or self.state_factor.time_dependent)

    def _scale(self, t, x):
        g = self.state_factor(t, x)
        if not np.all(g > 0):
            raise EvaluationError("utility state factor must be positive")
        return np.exp(_poly_eval(self.impatience, t)) * g

    def value(self, t, c, x):
        c = np.asarray(c, dtype=float)
        s = self._scale(t, x)
        a = self.risk_aversion
        if a == 1.0:
            return s * np.log(c)
        return s * (c ** (1.0 - a) - 1.0) / (1.0 - a)

    def dc(self, t, c, x):
        c = np.asarray(c, dtype=float)
        return self._scale(t, x) * c ** (-self.risk_aversion)

    def dcc(self, t, c, x):
        c = np.asarray(c, dtype=float)
        a = self.risk_aversion
        return -a * self._scale(t, x) * c ** (-a - 1.0)

    def dct(self, t, c, x):
        return _poly_deriv(self.impatience, np.asarray(t, dtype=float)) \
            * self.dc(t, c, x)

    def dcx(self, t, c, x):
        g = self.state_factor(t, x)
        ratio = self.state_factor.grad(t, x) / g[..., None]
        return self.dc(t, c, x)[..., None] * ratio

    def inverse_marginal_fn(self, t, x):
        s = self._scale(t, x)
        a = self.risk_aversion

        def inv(y):
            c = (y / s) ** (-1.0 / a)
            return c, -c / (a * y)
        return inv


class ScaledUtility(UtilityFn):
    """weight * inner, weight > 0 (used for social-planner weights)."""

    def __init__(self, weight, inner):
        self.weight = float(weight)
        if not self.weight > 0:
            raise ConfigError("utility scale must be positive")
        self.inner = inner

    @property
    def time_dependent(self):
        return self.inner.time_dependent

    def value(self, t, c, x):
        return self.weight * self.inner.value(t, c, x)

    def dc(self, t, c, x):
        return self.weight * self.inner.dc(t, c, x)

    def dcc(self, t, c, x):
        return self.weight * self.inner.dcc(t, c, x)

    def dct(self, t, c, x):
        return self.weight * self.inner.dct(t, c, x)

    def dcx(self, t, c, x):
        return self.weight * self.inner.dcx(t, c, x)

    def inverse_marginal_fn(self, t, x):
        inner_inv = self.inner.inverse_marginal_fn(t, x)
        k = self.weight

        def inv(y):
            c, slope = inner_inv(y / k)
            return c, slope / k
        return inv


class SumUtility(UtilityFn):
    """Pointwise sum of utilities of the *same* consumption (not a split).

    Keeps the generic numeric marginal inverse, which exercises the
    bracket-expansion path of the splitter."""

    def __init__(self, parts):
        self.parts = list(parts)
        if not self.parts:
            raise ConfigError("sum utility needs at least one part")

    @property
    def time_dependent(self):
        return any(p.time_dependent for p in self.parts)

    def value(self, t, c, x):
        return sum(p.value(t, c, x) for p in self.parts)

    def dc(self, t, c, x):
        return sum(p.dc(t, c, x) for p in self.parts)

    def dcc(self, t, c, x):
        return sum(p.dcc(t, c, x) for p in self.parts)

    def dct(self, t, c, x):
        return sum(p.dct(t, c, x) for p in self.parts)

    def dcx(self, t, c, x):
        return sum(p.dcx(t, c, x) for p in self.parts)


def _solve_marginal_level(parts, t, c, x, rel_tol=1e-13, max_iter=100):
    """Common marginal level y and per-part consumptions with sum exactly c.

    Monotone safeguarded Newton in log(y) on F(y) = sum_m inv_m(y) - c,
    bracketed by [max_m marginal_m(c), max_m marginal_m(c/M)].
    """
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    if not np.all(c > 0):
        raise SplitterError("total consumption must be strictly positive")
    n = len(parts)
    if n == 1:
        return parts[0].dc(t, c, x), [c]

    m_full = [p.dc(t, c, x) for p in parts]
    m_frac = [p.dc(t, c / n, x) for p in parts]
    y_lo = np.maximum.reduce(np.broadcast_arrays(*m_full)) if n > 1 else m_full[0]
    y_hi = np.maximum.reduce(np.broadcast_arrays(*m_frac)) if n > 1 else m_frac[0]
    if not (np.isfinite(y_lo).all() and np.isfinite(y_hi).all()
            and np.all(y_lo > 0) and np.all(y_hi >= y_lo)):
        raise SplitterError(
            "marginal utilities do not bracket a common level; "
            "check positivity/Inada conditions of the components")

    shape = np.broadcast_shapes(np.shape(t), c.shape, x.shape[:-1])
    l_lo = np.broadcast_to(np.log(y_lo), shape).astype(float).copy()
    l_hi = np.broadcast_to(np.log(y_hi), shape).astype(float).copy()
    l_hi = np.maximum(l_hi, l_lo + 1e-15)
    invs = [p.inverse_marginal_fn(t, x) for p in parts]
    ctol = rel_tol * np.broadcast_to(c, shape)

    level = 0.5 * (l_lo + l_hi)
    cs = None
    for _ in range(max_iter):
        y = np.exp(level)
        pairs = [inv(y) for inv in invs]
        cs = [np.broadcast_to(p[0], shape) for p in pairs]
        resid = sum(cs) - c
        if np.all(np.abs(resid) <= ctol):
            break
        above = resid > 0           # total too large -> level must rise
        l_lo = np.where(above, level, l_lo)
        l_hi = np.where(above, l_hi, level)
        slope = y * sum(p[1] for p in pairs)    # dF/d log y  (negative)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = level - resid / slope
        fallback = ~np.isfinite(newton) | (newton <= l_lo) | (newton >= l_hi)
        level = np.where(fallback, 0.5 * (l_lo + l_hi), newton)
    else:
        y = np.exp(0.5 * (l_lo + l_hi))
        pairs = [inv(y) for inv in invs]
        cs = [np.broadcast_to(p[0], shape) for p in pairs]
        resid = sum(cs) - c
        if not np.all(np.abs(resid) <= 1e-8 * c):
            raise SplitterError("consumption split failed to converge")

    # Close the split exactly: one member absorbs c - sum(others).  Pick
    # the largest allocation at each point -- the leftover residual is
    # bounded by rel_tol * c, which can exceed the *smallest* allocation
    # outright (ruining its first-order condition) but is always
    # negligible against the largest.
    stacked = np.stack([np.array(ci, dtype=float) for ci in cs], axis=0)
    largest = np.argmax(stacked, axis=0)[None, ...]
    others = (stacked.sum(axis=0)
              - np.take_along_axis(stacked, largest, axis=0)[0])
    closing = np.broadcast_to(c, shape) - others
    np.put_along_axis(stacked, largest, closing[None, ...], axis=0)
    return np.exp(level), [stacked[i] for i in range(n)]


class SupConvolution(UtilityFn):
    """Optimal-split combination of two utilities sharing one consumption."""

    def __init__(self, left, right, rel_tol=1e-13, max_iter=100):
        self.left = left
        self.right = right
        self.rel_tol = float(rel_tol)
        self.max_iter = int(max_iter)

    @property
    def time_dependent(self):
        return self.left.time_dependent or self.right.time_dependent

    def _level(self, t, c, x):
        y, (c1, c2) = _solve_marginal_level(
            [self.left, self.right], t, c, x, self.rel_tol, self.max_iter)
        return y, c1, c2

    def split(self, t, c, x):
        _, c1, c2 = self._level(t, c, x)
        return c1, c2

    def value(self, t, c, x):
        _, c1, c2 = self._level(t, c, x)
        return self.left.value(t, c1, x) + self.right.value(t, c2, x)

    def dc(self, t, c, x):
        return self._level(t, c, x)[0]

    def dcc(self, t, c, x):
        y, c1, c2 = self._level(t, c, x)
        ratio = (self.left.dc(t, c1, x) / self.left.dcc(t, c1, x)
                 + self.right.dc(t, c2, x) / self.right.dcc(t, c2, x))
        return y / ratio

    def dct(self, t, c, x):
        y, c1, c2 = self._level(t, c, x)
        lcc = self.left.dcc(t, c1, x)
        rcc = self.right.dcc(t, c2, x)
        curv = self.left.dc(t, c1, x) / lcc + self.right.dc(t, c2, x) / rcc
        mix = self.left.dct(t, c1, x) / lcc + self.right.dct(t, c2, x) / rcc
        return (y / curv) * mix

    def dcx(self, t, c, x):
        y, c1, c2 = self._level(t, c, x)
        lcc = self.left.dcc(t, c1, x)
        rcc = self.right.dcc(t, c2, x)
        curv = self.left.dc(t, c1, x) / lcc + self.right.dc(t, c2, x) / rcc
        mix = (self.left.dcx(t, c1, x) / lcc[..., None]
               + self.right.dcx(t, c2, x) / rcc[..., None])
        return (y / curv)[..., None] * mix

    def inverse_marginal_fn(self, t, x):
        fl = self.left.inverse_marginal_fn(t, x)
        fr = self.right.inverse_marginal_fn(t, x)

        def inv(y):
            cl, sl = fl(y)
            cr, sr = fr(y)
            return cl + cr, sl + sr
        return inv


def split(u1, u2, t, c, x, rel_tol=1e-13, max_iter=100):
    """Split total consumption c between u1 and u2 equalizing marginals.

    Returns (c1, c2) with c1 + c2 == c exactly (the second component takes
    the complement).  Raises SplitterError when no bracket exists, which is
    the numerical signature of an Inada violation.
    """
    _, (c1, c2) = _solve_marginal_level([u1, u2], t, c, x, rel_tol, max_iter)
    return c1, c2


def sup_convolve(u1, u2, rel_tol=1e-13, max_iter=100):
    return SupConvolution(u1, u2, rel_tol=rel_tol, max_iter=max_iter)


class AggregateUtility(UtilityFn):
    """Social-planner utility: weighted sup-convolution of M components.

    Zero-weight components receive zero consumption and drop out of the
    solve; allocations always return one column per original component.
    """

    def __init__(self, components, weights, rel_tol=1e-13, max_iter=100):
        self.components = list(components)
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size != len(self.components):
            raise ConfigError("need exactly one weight per component")
        if not np.isfinite(w).all() or np.any(w < 0):
            raise ConfigError("weights must be finite and non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-8:
            raise ConfigError("weights must lie on the unit simplex")
        self.weights = w
        self.rel_tol = float(rel_tol)
        self.max_iter = int(max_iter)
        self._kept = [i for i in range(w.size) if w[i] > 0]
        if not self._kept:
            raise ConfigError("at least one weight must be positive")
        self._parts = [ScaledUtility(w[i], self.components[i])
                       for i in self._kept]

    @property
    def time_dependent(self):
        return any(self.components[i].time_dependent for i in self._kept)

    def marginal_and_allocations(self, t, c, x):
        """One solve returning (marginal level, allocations (..., M))."""
        c = np.asarray(c, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), c.shape, x.shape[:-1])
        y, parts_alloc = _solve_marginal_level(
            self._parts, t, c, x, self.rel_tol, self.max_iter)
        alloc = np.zeros(shape + (len(self.components),))
        for slot, i in enumerate(self._kept):
            alloc[..., i] = parts_alloc[slot]
        return np.broadcast_to(y, shape), alloc

    def allocate(self, t, c, x):
        return self.marginal_and_allocations(t, c, x)[1]

    def value(self, t, c, x):
        _, alloc = self.marginal_and_allocations(t, c, x)
        return sum(self.weights[i]
                   * self.components[i].value(t, alloc[..., i], x)
                   for i in self._kept)

    def dc(self, t, c, x):
        return self.marginal_and_allocations(t, c, x)[0]

    def _curvature_pieces(self, t, c, x):
        y, alloc = self.marginal_and_allocations(t, c, x)
        comps = [(self.components[i], alloc[..., i]) for i in self._kept]
        curv = sum(u.dc(t, ci, x) / u.dcc(t, ci, x) for u, ci in comps)
        return y, comps, curv

    def dcc(self, t, c, x):
        y, _, curv = self._curvature_pieces(t, c, x)
        return y / curv

    def dct(self, t, c, x):
        y, comps, curv = self._curvature_pieces(t, c, x)
        mix = sum(u.dct(t, ci, x) / u.dcc(t, ci, x) for u, ci in comps)
        return (y / curv) * mix

    def dcx(self, t, c, x):
        y, comps, curv = self._curvature_pieces(t, c, x)
        mix = sum(u.dcx(t, ci, x) / u.dcc(t, ci, x)[..., None]
                  for u, ci in comps)
        return (y / curv)[..., None] * mix

    def inverse_marginal_fn(self, t, x):
        fns = [p.inverse_marginal_fn(t, x) for p in self._parts]

        def inv(y):
            pairs = [f(y) for f in fns]
            return sum(p[0] for p in pairs), sum(p[1] for p in pairs)
        return inv


def aggregate(components, weights, rel_tol=1e-13, max_iter=100):
    """Planner aggregation; a single component is returned unchanged."""
    components = list(components)
    if len(components) == 1:
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        if w.size != 1 or abs(float(w[0]) - 1.0) > 1e-8:
            raise ConfigError("single-component weight must be 1")
        return components[0]
    return AggregateUtility(components, weights, rel_tol=rel_tol,
                            max_iter=max_iter)


def cone_diagnostics(u, t, c, x, bounds=None):
    """Empirical regularity diagnostics over probe points.

    Reports relative risk aversion extremes, cross-derivative and impatience
    ratios, a log-growth ratio, and Inada probes; flags any metric exceeding
    the optional ``bounds`` mapping (keys matching metric names).
    """
    t = np.asarray(t, dtype=float)
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    report = ValidationReport(name="utility-cone")
    dc = u.dc(t, c, x)
    if not (np.isfinite(dc).all() and np.all(dc > 0)):
        report.flag("marginal utility not finite/positive on probes")
        return report
    dcc = u.dcc(t, c, x)
    rra = -c * dcc / dc
    cross = np.abs(u.dcx(t, c, x)) / dc[..., None]
    tilt = np.abs(u.dct(t, c, x)) / dc
    val = u.value(t, c, x)
    xnorm = np.abs(x).sum(axis=-1)
    growth = np.log(np.maximum(np.abs(val), 1e-300)) \
        / (1.0 + xnorm + np.abs(np.log(c)))
    t0 = float(np.ravel(t)[0])
    x0 = x.reshape(-1, x.shape[-1])[0]
    report.metrics.update({
        "rra_max": float(rra.max()),
        "rra_min": float(rra.min()),
        "cross_ratio_max": float(cross.max()),
        "impatience_ratio_max": float(tilt.max()),
        "log_growth_max": float(growth.max()),
        "marginal_at_tiny_c": float(np.ravel(u.dc(t0, 1e-8, x0))[0]),
        "marginal_at_huge_c": float(np.ravel(u.dc(t0, 1e8, x0))[0]),
        "n_probes": int(np.size(dc)),
    })
    if rra.min() <= 0:
        report.flag("utility is not strictly concave on probes")
    marg_lo = report.metrics["marginal_at_tiny_c"]
    marg_hi = report.metrics["marginal_at_huge_c"]
    if not marg_lo > 1e3 * max(marg_hi, 1e-300):
        report.flag("Inada probes suggest a bounded marginal utility")
    if bounds:
        for key, limit in bounds.items():
            got = report.metrics.get(key)
            if got is not None and got > float(limit):
                report.flag(f"{key}={got:.6g} exceeds bound {float(limit):.6g}")
    return report
