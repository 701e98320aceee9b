"""Declarative catalog of scalar fields over time and state.

Scenario files describe model coefficients (drift entries, payoff functions,
income rates, ...) as small dictionaries, e.g. ``{kind = "affine", axis = 0,
slope = 1.0}``.  This module parses those dictionaries into callable
expression objects.  Every expression maps ``(t, x)`` to a scalar array,
where ``x`` has shape ``(..., d)`` and ``t`` broadcasts against the leading
axes; all expressions also expose an analytic state gradient, which the
pricing code uses for exact marginal-utility gradients.

Supported kinds: ``constant``, ``affine``, ``exp_affine``, ``polynomial``
(separable, per-axis degree <= 4), ``time_poly``, ``sum``, ``product``,
``exp``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_MAX_POLY_DEGREE = 4


def _lead_shape(t, x):
    return np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])


class Expr:
    """Scalar field of (t, x).  Subclasses implement __call__ and grad."""

    kind = "?"
    time_dependent = False

    def __call__(self, t, x):
        raise NotImplementedError

    def grad(self, t, x):
        """State gradient, shape ``x.shape`` (one column per axis)."""
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


class Constant(Expr):
    kind = "constant"

    def __init__(self, value):
        self.value = float(value)

    def __call__(self, t, x):
        return np.full(_lead_shape(t, x), self.value)

    def grad(self, t, x):
        return np.zeros(np.broadcast_shapes(np.shape(t) + (1,), np.shape(x)))

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


class Affine(Expr):
    """intercept + slope * x[axis]."""

    kind = "affine"

    def __init__(self, axis=0, intercept=0.0, slope=1.0):
        self.axis = int(axis)
        self.intercept = float(intercept)
        self.slope = float(slope)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        val = self.intercept + self.slope * x[..., self.axis]
        return np.broadcast_to(val, _lead_shape(t, x)).copy()

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(np.broadcast_shapes(np.shape(t) + (1,), x.shape))
        g[..., self.axis] = self.slope
        return g

    def to_dict(self):
        return {"kind": self.kind, "axis": self.axis,
                "intercept": self.intercept, "slope": self.slope}


class ExpAffine(Expr):
    """exp(intercept + slope * x[axis])."""

    kind = "exp_affine"

    def __init__(self, axis=0, intercept=0.0, slope=1.0):
        self.axis = int(axis)
        self.intercept = float(intercept)
        self.slope = float(slope)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        val = np.exp(self.intercept + self.slope * x[..., self.axis])
        return np.broadcast_to(val, _lead_shape(t, x)).copy()

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(np.broadcast_shapes(np.shape(t) + (1,), x.shape))
        g[..., self.axis] = self.slope
        return g * self(t, x)[..., None]

    def to_dict(self):
        return {"kind": self.kind, "axis": self.axis,
                "intercept": self.intercept, "slope": self.slope}


class Polynomial(Expr):
    """constant + sum over axes of a polynomial in x[axis] (no cross terms).

    ``coeffs[i]`` lists the coefficients of x_i, x_i^2, ... for axis i
    (degree at most 4 per axis).
    """

    kind = "polynomial"

    def __init__(self, constant=0.0, coeffs=()):
        self.constant = float(constant)
        self.coeffs = [list(map(float, c)) for c in coeffs]
        for c in self.coeffs:
            if len(c) > _MAX_POLY_DEGREE:
                raise ConfigError(
                    f"polynomial degree {len(c)} exceeds {_MAX_POLY_DEGREE}")

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        val = np.full(x.shape[:-1], self.constant)
        for axis, c in enumerate(self.coeffs):
            xi = x[..., axis]
            p = np.zeros_like(xi)
            for ck in reversed(c):          # Horner on powers 1..deg
                p = xi * (ck + p)
            val = val + p
        return np.broadcast_to(val, _lead_shape(t, x)).copy()

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(np.broadcast_shapes(np.shape(t) + (1,), x.shape))
        for axis, c in enumerate(self.coeffs):
            xi = x[..., axis]
            dp = np.zeros_like(xi)
            for k in reversed(range(len(c))):   # d/dx of sum c_k x^{k+1}
                dp = dp * xi + (k + 1) * c[k]
            g[..., axis] = dp
        return g

    def to_dict(self):
        return {"kind": self.kind, "constant": self.constant,
                "coeffs": [list(c) for c in self.coeffs]}


class TimePoly(Expr):
    """Polynomial in t alone: coeffs[k] * t^k."""

    kind = "time_poly"

    def __init__(self, coeffs=(0.0,)):
        self.coeffs = list(map(float, coeffs))
        if len(self.coeffs) > _MAX_POLY_DEGREE + 1:
            raise ConfigError("time polynomial degree exceeds 4")

    @property
    def time_dependent(self):
        return any(c != 0.0 for c in self.coeffs[1:])

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        val = np.zeros_like(t)
        for c in reversed(self.coeffs):
            val = val * t + c
        return np.broadcast_to(val, _lead_shape(t, x)).copy()

    def grad(self, t, x):
        return np.zeros(np.broadcast_shapes(np.shape(t) + (1,), np.shape(x)))

    def to_dict(self):
        return {"kind": self.kind, "coeffs": list(self.coeffs)}


class Sum(Expr):
    kind = "sum"

    def __init__(self, terms):
        self.terms = list(terms)
        if not self.terms:
            raise ConfigError("sum expression needs at least one term")

    @property
    def time_dependent(self):
        return any(e.time_dependent for e in self.terms)

    def __call__(self, t, x):
        out = self.terms[0](t, x)
        for e in self.terms[1:]:
            out = out + e(t, x)
        return out

    def grad(self, t, x):
        out = self.terms[0].grad(t, x)
        for e in self.terms[1:]:
            out = out + e.grad(t, x)
        return out

    def to_dict(self):
        return {"kind": self.kind, "terms": [e.to_dict() for e in self.terms]}


class Product(Expr):
    kind = "product"

    def __init__(self, factors):
        self.factors = list(factors)
        if not self.factors:
            raise ConfigError("product expression needs at least one factor")

    @property
    def time_dependent(self):
        return any(e.time_dependent for e in self.factors)

    def __call__(self, t, x):
        out = self.factors[0](t, x)
        for e in self.factors[1:]:
            out = out * e(t, x)
        return out

    def grad(self, t, x):
        vals = [e(t, x) for e in self.factors]
        grads = [e.grad(t, x) for e in self.factors]
        total = np.zeros_like(grads[0])
        for i in range(len(self.factors)):
            rest = np.ones_like(vals[0])
            for j, v in enumerate(vals):
                if j != i:
                    rest = rest * v
            total = total + grads[i] * rest[..., None]
        return total

    def to_dict(self):
        return {"kind": self.kind,
                "factors": [e.to_dict() for e in self.factors]}


class ExpOf(Expr):
    """exp of another catalog entry."""

    kind = "exp"

    def __init__(self, inner):
        self.inner = inner

    @property
    def time_dependent(self):
        return self.inner.time_dependent

    def __call__(self, t, x):
        return np.exp(self.inner(t, x))

    def grad(self, t, x):
        return self.inner.grad(t, x) * self(t, x)[..., None]

    def to_dict(self):
        return {"kind": self.kind, "inner": self.inner.to_dict()}


_SCALAR_KEYS = {
    "constant": ("value",),
    "affine": ("axis", "intercept", "slope"),
    "exp_affine": ("axis", "intercept", "slope"),
}


def parse_field(obj, where="field"):
    """Build an Expr from a config dictionary (or a bare number).

    ``where`` is a dotted path used to contextualize error messages.
    """
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return Constant(obj)
    if isinstance(obj, Expr):
        return obj
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a number or an expression "
                          f"table, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind is None:
        raise ConfigError(f"{where}: expression table is missing 'kind'")
    try:
        if kind == "constant":
            return Constant(obj.get("value", 0.0))
        if kind == "affine":
            return Affine(obj.get("axis", 0), obj.get("intercept", 0.0),
                          obj.get("slope", 1.0))
        if kind == "exp_affine":
            return ExpAffine(obj.get("axis", 0), obj.get("intercept", 0.0),
                             obj.get("slope", 1.0))
        if kind == "polynomial":
            return Polynomial(obj.get("constant", 0.0), obj.get("coeffs", []))
        if kind == "time_poly":
            return TimePoly(obj.get("coeffs", [0.0]))
        if kind == "sum":
            return Sum([parse_field(o, f"{where}.terms[{i}]")
                        for i, o in enumerate(obj.get("terms", []))])
        if kind == "product":
            return Product([parse_field(o, f"{where}.factors[{i}]")
                            for i, o in enumerate(obj.get("factors", []))])
        if kind == "exp":
            return ExpOf(parse_field(obj.get("inner"), f"{where}.inner"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: malformed '{kind}' expression: {exc}")
    raise ConfigError(f"{where}: unknown expression kind '{kind}'")


def check_axes(expr, dimension, where="field"):
    """Validate that every axis index referenced by ``expr`` is < dimension."""
    if isinstance(expr, (Affine, ExpAffine)):
        if not 0 <= expr.axis < dimension:
            raise ConfigError(
                f"{where}: axis {expr.axis} out of range for d={dimension}")
    elif isinstance(expr, Polynomial):
        if len(expr.coeffs) > dimension:
            raise ConfigError(
                f"{where}: polynomial lists {len(expr.coeffs)} axes "
                f"but d={dimension}")
    elif isinstance(expr, Sum):
        for i, e in enumerate(expr.terms):
            check_axes(e, dimension, f"{where}.terms[{i}]")
    elif isinstance(expr, Product):
        for i, e in enumerate(expr.factors):
            check_axes(e, dimension, f"{where}.factors[{i}]")
    elif isinstance(expr, ExpOf):
        check_axes(expr.inner, dimension, f"{where}.inner")
