"""Backward parabolic solves on rectangular grids.

Solves terminal-value problems

    dv/dt + (1/2) tr(sigma sigma' D^2 v) + b . grad v + rho v + g = 0,
    v(1, .) = terminal,

with a theta-scheme (Crank-Nicolson by default), per-axis first-order
upwinding wherever the cell Peclet number |b| dx / a exceeds a limit, and
zero-second-derivative boundary rows (linear extrapolation) on the box
edges.  Implicit systems are solved with a sparse LU; when every
coefficient is time-independent and the time grid is uniform, the
factorization is computed once and reused across all steps.

A growth guard aborts with SolverError if the marched solution escapes the
envelope implied by the terminal data, the source, and the positive part of
the reaction: that is the numerical signature of an under-resolved grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from .errors import ConfigError, EvaluationError, SolverError


@dataclass
class GridFunction:
    """Values on a (time x space) grid with linear interpolation.

    values has shape (n_times, *sgrid.npoints).  Spatial queries outside
    the box extrapolate linearly, consistent with the boundary rows of the
    solver that produced the surface.
    """

    times: np.ndarray
    sgrid: object
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.times.size,) + tuple(self.sgrid.npoints)
        if self.values.shape != expected:
            raise ConfigError(
                f"grid function values have shape {self.values.shape}, "
                f"expected {expected}")

    def _interp_level(self, k, pts):
        """Multilinear interpolation of time level k at points (P, d)."""
        vals = self.values[k]
        lo = self.sgrid.lower
        dx = self.sgrid.dx
        d = self.sgrid.dimension
        if d == 1:
            n = self.sgrid.npoints[0]
            pos = (pts[:, 0] - lo[0]) / dx[0]
            i = np.clip(np.floor(pos).astype(int), 0, n - 2)
            f = pos - i
            return vals[i] * (1.0 - f) + vals[i + 1] * f
        if d == 2:
            nx, ny = self.sgrid.npoints
            px = (pts[:, 0] - lo[0]) / dx[0]
            py = (pts[:, 1] - lo[1]) / dx[1]
            i = np.clip(np.floor(px).astype(int), 0, nx - 2)
            j = np.clip(np.floor(py).astype(int), 0, ny - 2)
            fx = px - i
            fy = py - j
            v00 = vals[i, j]
            v10 = vals[i + 1, j]
            v01 = vals[i, j + 1]
            v11 = vals[i + 1, j + 1]
            return ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10
                    + (1 - fx) * fy * v01 + fx * fy * v11)
        interp = self._interpolator_for_level(k)
        return interp(pts)

    def _interpolator_for_level(self, k):
        return RegularGridInterpolator(
            tuple(self.sgrid.axes()), self.values[k],
            bounds_error=False, fill_value=None)

    def sample_paths(self, times, states):
        """Evaluate the surface along paths: states (P, K, d) at the given
        times (K,).  Times need not coincide with the surface's own levels;
        values are blended linearly between the bracketing levels."""
        states = np.asarray(states, dtype=float)
        times = np.asarray(times, dtype=float)
        n_paths, n_q, _ = states.shape
        out = np.empty((n_paths, n_q))
        idx = np.clip(np.searchsorted(self.times, times, side="right") - 1,
                      0, self.times.size - 2)
        for k in range(n_q):
            i0 = idx[k]
            span = self.times[i0 + 1] - self.times[i0]
            wt = (times[k] - self.times[i0]) / span
            v0 = self._interp_level(i0, states[:, k, :])
            if wt <= 1e-14:
                out[:, k] = v0
            else:
                out[:, k] = (1.0 - wt) * v0 + wt * self._interp_level(
                    i0 + 1, states[:, k, :])
        return out

    def interpolate(self, t, x):
        """Scattered-point interpolation in (t, x) for a few queries."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        interp = RegularGridInterpolator(
            (self.times,) + tuple(self.sgrid.axes()), self.values,
            bounds_error=False, fill_value=None)
        pts = np.column_stack([np.broadcast_to(t, x.shape[:1]), x])
        return interp(pts)

    def gradient(self, axis):
        """Spatial gradient along one axis (central differences) as a new
        surface."""
        g = np.gradient(self.values, self.sgrid.axes()[axis], axis=1 + axis)
        return GridFunction(self.times, self.sgrid, g)


def _operator_1d(sgrid, a, b, rho, peclet_limit):
    n = sgrid.npoints[0]
    dx = sgrid.dx[0]
    idx = np.arange(1, n - 1)
    aa = a[idx, 0, 0]
    bb = b[idx, 0]
    rr = rho[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        peclet = np.abs(bb) * dx / np.where(aa > 0, aa, np.inf)
    up = peclet > peclet_limit
    c2 = aa / dx ** 2
    adv_r = np.where(up, np.where(bb > 0, bb / dx, 0.0), bb / (2 * dx))
    adv_l = np.where(up, np.where(bb < 0, -bb / dx, 0.0), -bb / (2 * dx))
    adv_c = np.where(up, -np.abs(bb) / dx, 0.0)
    rows = np.concatenate([idx, idx, idx])
    cols = np.concatenate([idx - 1, idx, idx + 1])
    vals = np.concatenate([c2 + adv_l, -2 * c2 + adv_c + rr, c2 + adv_r])
    return rows, cols, vals


def _operator_2d(sgrid, a, b, rho, peclet_limit):
    nx, ny = sgrid.npoints
    dx, dy = sgrid.dx
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1),
                         indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    center = ii * ny + jj
    a = a.reshape(nx, ny, 2, 2)
    b = b.reshape(nx, ny, 2)
    rho = rho.reshape(nx, ny)
    a11 = a[ii, jj, 0, 0]
    a22 = a[ii, jj, 1, 1]
    a12 = a[ii, jj, 0, 1]
    b1 = b[ii, jj, 0]
    b2 = b[ii, jj, 1]
    rr = rho[ii, jj]

    def advection(bb, aa, h):
        with np.errstate(divide="ignore", invalid="ignore"):
            peclet = np.abs(bb) * h / np.where(aa > 0, aa, np.inf)
        up = peclet > peclet_limit
        plus = np.where(up, np.where(bb > 0, bb / h, 0.0), bb / (2 * h))
        minus = np.where(up, np.where(bb < 0, -bb / h, 0.0), -bb / (2 * h))
        diag = np.where(up, -np.abs(bb) / h, 0.0)
        return plus, minus, diag

    xp, xm, xc = advection(b1, a11, dx)
    yp, ym, yc = advection(b2, a22, dy)
    cross = a12 / (2.0 * dx * dy)      # 2*a12 times the /(4 dx dy) stencil

    rows, cols, vals = [], [], []

    def add(col, val):
        rows.append(center)
        cols.append(col)
        vals.append(val)

    add(center, -2 * a11 / dx ** 2 - 2 * a22 / dy ** 2 + xc + yc + rr)
    add(center + ny, a11 / dx ** 2 + xp)      # i+1
    add(center - ny, a11 / dx ** 2 + xm)      # i-1
    add(center + 1, a22 / dy ** 2 + yp)       # j+1
    add(center - 1, a22 / dy ** 2 + ym)       # j-1
    add(center + ny + 1, cross)
    add(center - ny - 1, cross)
    add(center + ny - 1, -cross)
    add(center - ny + 1, -cross)
    return (np.concatenate(rows), np.concatenate(cols),
            np.concatenate(vals))


def _boundary_rows(sgrid):
    """Zero-second-normal-derivative rows, one per boundary node."""
    d = sgrid.dimension
    if d == 1:
        n = sgrid.npoints[0]
        rows = np.array([0, 0, 0, n - 1, n - 1, n - 1])
        cols = np.array([0, 1, 2, n - 1, n - 2, n - 3])
        vals = np.array([1.0, -2.0, 1.0, 1.0, -2.0, 1.0])
        return rows, cols, vals
    nx, ny = sgrid.npoints
    rows, cols, vals = [], [], []

    def extrap(node, step):
        rows.extend([node, node, node])
        cols.extend([node, node + step, node + 2 * step])
        vals.extend([1.0, -2.0, 1.0])

    for j in range(ny):                      # x-edges own the corners
        extrap(0 * ny + j, ny)
        extrap((nx - 1) * ny + j, -ny)
    for i in range(1, nx - 1):
        extrap(i * ny + 0, 1)
        extrap(i * ny + (ny - 1), -1)
    return (np.asarray(rows), np.asarray(cols), np.asarray(vals))


def _interior_mask_flat(sgrid):
    d = sgrid.dimension
    mask = np.ones(sgrid.npoints, dtype=bool)
    for axis in range(d):
        sl = [slice(None)] * d
        sl[axis] = 0
        mask[tuple(sl)] = False
        sl[axis] = -1
        mask[tuple(sl)] = False
    return mask.ravel()


class _Stepper:
    """Assembled operator pieces for one coefficient snapshot."""

    def __init__(self, diffusion, reaction, sgrid, t, peclet_limit):
        nodes = sgrid.flat_states()
        sig = diffusion.sigma_at(t, nodes)
        drift = diffusion.drift_at(t, nodes)
        if not (np.isfinite(sig).all() and np.isfinite(drift).all()):
            raise EvaluationError(
                f"non-finite PDE coefficient at t={float(t):.6g}")
        a = 0.5 * np.einsum("nij,nkj->nik", sig, sig)
        rho = (np.broadcast_to(reaction(t, nodes), nodes.shape[:1]).copy()
               if reaction is not None else np.zeros(nodes.shape[0]))
        if not np.isfinite(rho).all():
            raise EvaluationError(
                f"non-finite reaction coefficient at t={float(t):.6g}")
        self.max_rho_pos = float(np.maximum(rho, 0.0).max())
        d = sgrid.dimension
        if d == 1:
            rows, cols, vals = _operator_1d(sgrid, a, drift, rho,
                                            peclet_limit)
        elif d == 2:
            rows, cols, vals = _operator_2d(sgrid, a, drift, rho,
                                            peclet_limit)
        else:
            raise ConfigError("PDE solves support at most two state "
                              "dimensions")
        n = nodes.shape[0]
        self.n = n
        self.operator = sparse.coo_matrix(
            (vals, (rows, cols)), shape=(n, n)).tocsr()
        self._sgrid = sgrid
        self._factor_cache = {}

    def implicit_factor(self, theta_dt):
        key = float(theta_dt)
        if key not in self._factor_cache:
            interior = _interior_mask_flat(self._sgrid).astype(float)
            eye = sparse.diags(interior)
            brows, bcols, bvals = _boundary_rows(self._sgrid)
            bmat = sparse.coo_matrix((bvals, (brows, bcols)),
                                     shape=(self.n, self.n))
            mat = (eye - theta_dt * self.operator + bmat).tocsc()
            self._factor_cache[key] = splu(mat)
        return self._factor_cache[key]


def solve_parabolic(diffusion, times, sgrid, terminal, reaction=None,
                    source=None, theta=0.5, static=False,
                    peclet_limit=2.0, stability_check=True,
                    growth_margin=1.05):
    """March the terminal-value problem backward over ``times``.

    ``reaction`` and ``source`` are callables (t, states) -> values on the
    flat node list (or None).  Set ``static=True`` when all coefficients
    (and the source) are time-independent to reuse one factorization.
    Returns a GridFunction over (times, sgrid).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ConfigError("PDE time levels must increase strictly")
    nodes = sgrid.flat_states()
    n = nodes.shape[0]
    term = np.broadcast_to(np.asarray(terminal, dtype=float).ravel(), (n,))
    if not np.isfinite(term).all():
        raise EvaluationError("non-finite terminal values in PDE solve")

    n_levels = times.size
    out = np.empty((n_levels, n))
    out[-1] = term

    interior = _interior_mask_flat(sgrid)
    dts = np.diff(times)
    uniform = np.allclose(dts, dts[0], rtol=1e-12, atol=0.0)

    def src(t):
        if source is None:
            return None
        g = np.broadcast_to(source(t, nodes), (n,)).copy()
        if not np.isfinite(g).all():
            raise EvaluationError(
                f"non-finite PDE source at t={float(t):.6g}")
        return g

    sup_term = float(np.abs(term).max())
    max_src = 0.0
    max_rho = 0.0

    stepper_next = _Stepper(diffusion, reaction, sgrid, times[-1],
                            peclet_limit)
    g_next = src(times[-1])
    if g_next is not None:
        max_src = max(max_src, float(np.abs(g_next).max()))
    max_rho = max(max_rho, stepper_next.max_rho_pos)

    for k in range(n_levels - 2, -1, -1):
        dt = times[k + 1] - times[k]
        if static and uniform:
            stepper_now = stepper_next
            g_now = g_next
        else:
            stepper_now = _Stepper(diffusion, reaction, sgrid, times[k],
                                   peclet_limit)
            g_now = src(times[k])
        if g_now is not None:
            max_src = max(max_src, float(np.abs(g_now).max()))
        max_rho = max(max_rho, stepper_now.max_rho_pos)

        v = out[k + 1]
        rhs = v + (1.0 - theta) * dt * (stepper_next.operator @ v)
        if g_next is not None:
            rhs = rhs + (1.0 - theta) * dt * g_next
        if g_now is not None:
            rhs = rhs + theta * dt * g_now
        rhs = np.where(interior, rhs, 0.0)
        out[k] = stepper_now.implicit_factor(theta * dt).solve(rhs)

        if stability_check:
            horizon = times[-1] - times[k]
            envelope = ((sup_term + horizon * max_src)
                        * np.exp(max_rho * horizon) * growth_margin + 1e-9)
            peak = float(np.abs(out[k]).max())
            if peak > envelope:
                raise SolverError(
                    f"PDE solution reached {peak:.3e} at t={times[k]:.4g}, "
                    f"outside the growth envelope {envelope:.3e}; refine "
                    "the grid or widen the domain")
        stepper_next = stepper_now
        g_next = g_now

    return GridFunction(times, sgrid,
                        out.reshape((n_levels,) + tuple(sgrid.npoints)))
