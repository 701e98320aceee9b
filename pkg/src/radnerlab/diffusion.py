"""State-process machinery: grids, coefficient validation, Euler-Maruyama
simulation with per-path counter-based substreams, and pathwise trapezoidal
integrals.

The simulated diffusion dX_t = b(t, X_t) dt + sigma(t, X_t) dW_t drives every
other module: the same time grid is shared by the Monte Carlo layer and the
backward PDE solvers so surfaces can be sampled along paths without
interpolating in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EvaluationError
from .expressions import Expr
from .reporting import ValidationReport


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times on [0, 1].

    ``n_steps`` counts time *points* (so a grid with n_steps=5 has four
    Euler increments).
    """

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 2:
            raise ConfigError("time grid needs at least two points")
        if not (np.all(np.diff(t) > 0) and t[0] == 0.0 and t[-1] == 1.0):
            raise ConfigError("times must increase strictly from 0.0 to 1.0")

    @classmethod
    def uniform(cls, n_steps):
        if n_steps < 2:
            raise ConfigError("uniform time grid needs n_steps >= 2")
        return cls(np.linspace(0.0, 1.0, int(n_steps)))

    @property
    def n_steps(self):
        return self.times.size

    @property
    def dt(self):
        return np.diff(self.times)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform rectangular grid on a box in R^d."""

    lower: np.ndarray
    upper: np.ndarray
    npoints: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        npts = tuple(int(n) for n in np.atleast_1d(self.npoints))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "npoints", npts)
        if not (lo.shape == hi.shape and lo.ndim == 1 and len(npts) == lo.size):
            raise ConfigError("spatial grid bounds/counts are inconsistent")
        if np.any(hi <= lo):
            raise ConfigError("spatial grid upper bounds must exceed lower")
        if any(n < 3 for n in npts):
            raise ConfigError("spatial grid needs at least 3 points per axis")

    @classmethod
    def centered(cls, center, radius, npoints):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        radius = np.broadcast_to(np.asarray(radius, dtype=float), center.shape)
        npoints = np.broadcast_to(np.asarray(npoints), center.shape)
        return cls(center - radius, center + radius, tuple(npoints))

    @property
    def dimension(self):
        return self.lower.size

    @property
    def dx(self):
        return (self.upper - self.lower) / (np.array(self.npoints) - 1)

    def axes(self):
        return [np.linspace(self.lower[i], self.upper[i], self.npoints[i])
                for i in range(self.dimension)]

    def states(self):
        """All grid nodes as an array of shape (*npoints, d)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def flat_states(self):
        return self.states().reshape(-1, self.dimension)

    def interior_mask(self, fraction=0.5):
        """Boolean mask over nodes in the central ``fraction`` of each axis."""
        masks = []
        for i, ax in enumerate(self.axes()):
            c = 0.5 * (self.lower[i] + self.upper[i])
            half = 0.5 * fraction * (self.upper[i] - self.lower[i])
            masks.append(np.abs(ax - c) <= half + 1e-12)
        out = masks[0]
        for m in masks[1:]:
            out = np.logical_and.outer(out, m)
        return out


@dataclass
class DiffusionSpec:
    """Coefficients of the state process: drift entries and a full dispersion
    matrix of catalog expressions, plus the bound the inverse dispersion is
    supposed to satisfy."""

    dimension: int
    x0: np.ndarray
    drift: list            # d expressions
    sigma: list            # d x d nested list of expressions
    inverse_bound: float = np.inf
    modulus: object = None  # optional callable eps -> bound for |dsigma|

    def __post_init__(self):
        self.dimension = int(self.dimension)
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.x0.size != self.dimension:
            raise ConfigError("x0 length does not match dimension")
        if len(self.drift) != self.dimension:
            raise ConfigError("drift needs one entry per dimension")
        if (len(self.sigma) != self.dimension
                or any(len(row) != self.dimension for row in self.sigma)):
            raise ConfigError("sigma must be a d x d table of entries")

    @property
    def time_dependent(self):
        entries = list(self.drift) + [e for row in self.sigma for e in row]
        return any(e.time_dependent for e in entries)

    def drift_at(self, t, x):
        """Drift vector, shape (..., d)."""
        return np.stack([e(t, x) for e in self.drift], axis=-1)

    def sigma_at(self, t, x):
        """Dispersion matrix, shape (..., d, d)."""
        rows = [np.stack([e(t, x) for e in row], axis=-1)
                for row in self.sigma]
        return np.stack(rows, axis=-2)


@dataclass
class PathBundle:
    """Simulated paths on a shared time grid.

    states has shape (n_paths, n_steps, d); increments holds the Brownian
    increments (n_paths, n_steps - 1, d) used to generate them.
    """

    tgrid: TimeGrid
    states: np.ndarray
    increments: np.ndarray
    seed: int

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def terminal(self):
        return self.states[:, -1, :]


def _brownian_increments(seed, n_paths, n_incr, dimension, dt, first_path=0):
    """One counter-based substream per path: path i draws from
    Philox(key=(seed, i)), so enlarging n_paths never reshuffles existing
    paths and serial evaluation is reproducible by construction."""
    out = np.empty((n_paths, n_incr, dimension))
    for i in range(n_paths):
        key = np.array([seed, first_path + i], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[i] = gen.standard_normal((n_incr, dimension))
    out *= np.sqrt(dt)[None, :, None]
    return out


def simulate_paths(spec, tgrid, n_paths, seed, first_path=0):
    """Euler-Maruyama paths of the state diffusion.

    ``first_path`` offsets the substream index so a large bundle can be
    simulated in chunks that agree bitwise with the one-shot version.
    Raises EvaluationError (with a time/state pointer) if a coefficient
    evaluates to a non-finite value along the way.
    """
    n_paths = int(n_paths)
    if n_paths <= 0:
        raise ConfigError("n_paths must be positive")
    dt = tgrid.dt
    n_incr = dt.size
    dW = _brownian_increments(int(seed), n_paths, n_incr, spec.dimension,
                              dt, int(first_path))
    states = np.empty((n_paths, tgrid.n_steps, spec.dimension))
    states[:, 0, :] = spec.x0
    for k in range(n_incr):
        t = tgrid.times[k]
        xk = states[:, k, :]
        b = spec.drift_at(t, xk)
        s = spec.sigma_at(t, xk)
        if not (np.isfinite(b).all() and np.isfinite(s).all()):
            raise EvaluationError(
                f"non-finite diffusion coefficient at t={t:.6g} "
                f"(step {k} of {n_incr})")
        states[:, k + 1, :] = (xk + b * dt[k]
                               + np.einsum("pij,pj->pi", s, dW[:, k, :]))
    return PathBundle(tgrid=tgrid, states=states, increments=dW,
                      seed=int(seed))


def path_integral(bundle, integrand):
    """Cumulative trapezoidal integral of integrand(t, X_t) along each path.

    Returns shape (n_paths, n_steps); column k approximates the integral
    over [0, t_k], with column 0 identically zero.
    """
    times = bundle.tgrid.times
    vals = integrand(times[None, :], bundle.states)
    vals = np.broadcast_to(vals, bundle.states.shape[:2])
    if not np.isfinite(vals).all():
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise EvaluationError(
            f"non-finite integrand on path {bad[0]} at t={times[bad[1]]:.6g}")
    dt = bundle.tgrid.dt
    steps = 0.5 * (vals[:, :-1] + vals[:, 1:]) * dt[None, :]
    out = np.empty_like(vals)
    out[:, 0] = 0.0
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return out


def _inverse_frobenius(sig):
    """Frobenius norm of sigma^{-1} per sample via singular values; returns
    +inf where sigma is singular (no exceptions)."""
    svals = np.linalg.svd(sig, compute_uv=False)
    with np.errstate(divide="ignore"):
        inv = np.where(svals > 0.0, 1.0 / svals, np.inf)
    return np.sqrt(np.sum(inv ** 2, axis=-1))


def validate_coefficients(spec, sgrid, tgrid, max_time_samples=21,
                          shifts=(1, 2, 3)):
    """Sample drift/dispersion over the grid and report boundedness,
    invertibility against ``spec.inverse_bound``, and an empirical
    continuity-modulus table for the dispersion.

    Uniform continuity itself is not checkable from finitely many samples;
    the modulus table is evidence, not proof, and is compared against
    ``spec.modulus`` only when one is supplied.
    """
    report = ValidationReport(name="diffusion-coefficients")
    k = max(1, (tgrid.n_steps - 1) // max(1, max_time_samples - 1))
    t_samples = tgrid.times[::k]
    if t_samples[-1] != tgrid.times[-1]:
        t_samples = np.append(t_samples, tgrid.times[-1])
    nodes = sgrid.states()
    d = sgrid.dimension

    max_drift = 0.0
    max_sigma = 0.0
    max_inv = 0.0
    modulus_table = {}
    for t in t_samples:
        b = spec.drift_at(t, nodes)
        s = spec.sigma_at(t, nodes)
        if not np.isfinite(b).all():
            report.flag(f"non-finite drift at t={t:.6g}")
            continue
        if not np.isfinite(s).all():
            report.flag(f"non-finite dispersion at t={t:.6g}")
            continue
        max_drift = max(max_drift, float(np.abs(b).max()))
        frob = np.sqrt(np.sum(s ** 2, axis=(-2, -1)))
        max_sigma = max(max_sigma, float(frob.max()))
        max_inv = max(max_inv, float(_inverse_frobenius(s).max()))
        # modulus of continuity along each axis, for a few grid shifts
        for axis in range(d):
            n_ax = sgrid.npoints[axis]
            for shift in shifts:
                if shift >= n_ax:
                    continue
                eps = shift * sgrid.dx[axis]
                lead = [slice(None)] * d
                lag = [slice(None)] * d
                lead[axis] = slice(shift, None)
                lag[axis] = slice(None, -shift)
                diff = s[tuple(lead)] - s[tuple(lag)]
                sup = float(np.sqrt(np.sum(diff ** 2, axis=(-2, -1))).max())
                key = round(float(eps), 12)
                modulus_table[key] = max(modulus_table.get(key, 0.0), sup)

    report.metrics["max_abs_drift"] = max_drift
    report.metrics["max_frobenius_sigma"] = max_sigma
    report.metrics["max_frobenius_inverse_sigma"] = max_inv
    report.metrics["inverse_bound"] = float(spec.inverse_bound)
    rows = sorted(modulus_table.items())
    report.tables["dispersion_modulus"] = [
        {"epsilon": e, "sup_change": v} for e, v in rows]
    if max_inv > spec.inverse_bound:
        report.flag(
            f"inverse dispersion norm {max_inv:.6g} exceeds bound "
            f"{spec.inverse_bound:.6g}")
    if spec.modulus is not None:
        for e, v in rows:
            allowed = float(spec.modulus(e))
            if v > allowed:
                report.flag(
                    f"dispersion changed by {v:.6g} over eps={e:.6g}, "
                    f"above declared modulus {allowed:.6g}")
                break
    return report
