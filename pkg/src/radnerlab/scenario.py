"""Scenario configuration: a TOML file describes one complete economy plus
the numerical settings used to solve and check it.

Layout (sections in canonical order)::

    name = "benchmark"
    seed = 42

    [diffusion]
    dimension = 1
    x0 = [0.0]
    drift = [0.0]                    # one field per axis
    sigma = [[1.0]]                  # d x d matrix of fields
    inverse_bound = 25.0             # optional uniform-ellipticity bound

    [economy]
    notional_payoff = 1.0            # terminal scale of the notional unit
    notional_growth = 0.0            # growth exponent of the notional unit
    impatience = 0.0                 # aggregate discount exponent
    log_terminal_endowment = {kind = "affine", axis = 0}
    log_income_rate = 0.0

    [[stocks]]
    name = "idx"
    terminal_payoff = {kind = "affine", axis = 0}
    dividend_rate = 0.0
    dividend_growth = 0.0

    [[agents]]
    name = "solo"
    utility = {kind = "crra", risk_aversion = 1.0}
    income_share = 1.0               # terminal_share defaults to this

    [grid]                           # [mc], [solver], [verify],
    n_times = 200                    # [completeness], [[reference]] follow
    n_space = [400]
    radius = [6.0]

Every "field" accepts either a bare number or an expression table (see
``expressions``).  Utilities accept ``crra`` (with optional per-power
``impatience`` coefficients and a ``state_factor`` field), ``scale``,
``sum``, and ``convolve``.

``scenario_to_toml`` emits a deterministic TOML rendering of a parsed tree
(used for artifact dumps and round-trip tests): floats via ``repr``, nested
tables inline, list-of-table sections in input order.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                         # Python < 3.11
    import tomli as tomllib

import numpy as np

from .diffusion import DiffusionSpec, SpatialGrid, TimeGrid
from .economy import AgentSpec, EconomySpec, StockSpec
from .errors import ConfigError
from .expressions import check_axes, parse_field
from .negishi import SolverConfig
from .utilities import (CRRAUtility, ScaledUtility, SumUtility, UtilityFn,
                        sup_convolve)
from .verify import VerifyConfig


@dataclass
class CompletenessSettings:
    rel_tol: float = 1e-6
    fail_fraction_tol: float = 1e-3
    interior_fraction: float = 0.5
    probe_paths: int = 3000
    probe_steps: int = 12000
    chunk_paths: int = 1000
    n_random_claims: int = 2
    rel_rms_bound: float = 0.01
    expect_rank_failure: bool = False   # scenario is *meant* to be incomplete


@dataclass
class ReferenceSurface:
    """Closed-form surface to compare a solved surface against.

    ``floor`` is the denominator floor of the relative error: errors are
    measured against max(|closed form|, floor), so surfaces that cross
    zero can still be compared (set the floor to the natural scale of the
    surface, e.g. one notional unit)."""

    target: str                     # "density" | "numeraire" | "stock"
    expr: object                    # Expr of (t, x)
    stock: str = ""                 # stock name when target == "stock"
    max_rel_err: float = 1e-3
    floor: float = 0.0


@dataclass
class Scenario:
    name: str
    seed: int
    econ: EconomySpec
    tgrid: TimeGrid
    sgrid: SpatialGrid
    n_paths: int
    solver: SolverConfig
    verify: VerifyConfig
    completeness: CompletenessSettings
    references: list = dataclass_field(default_factory=list)
    theta: float = 0.5
    tree: dict = dataclass_field(default_factory=dict)


def build_utility(obj, where):
    """Parse a utility table: crra / scale / sum / convolve."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a utility table")
    kind = obj.get("kind")
    if kind == "crra":
        state = obj.get("state_factor")
        return CRRAUtility(
            risk_aversion=obj.get("risk_aversion", 1.0),
            impatience=tuple(obj.get("impatience", [0.0])),
            state_factor=(parse_field(state, f"{where}.state_factor")
                          if state is not None else None))
    if kind == "scale":
        return ScaledUtility(obj.get("weight", 1.0),
                             build_utility(obj.get("inner"), f"{where}.inner"))
    if kind == "sum":
        return SumUtility([build_utility(o, f"{where}.parts[{i}]")
                           for i, o in enumerate(obj.get("parts", []))])
    if kind == "convolve":
        return sup_convolve(build_utility(obj.get("left"), f"{where}.left"),
                            build_utility(obj.get("right"), f"{where}.right"))
    raise ConfigError(f"{where}: unknown utility kind '{kind}'")


def _field(table, key, where, default=None):
    if key not in table:
        if default is None:
            raise ConfigError(f"{where}: missing required field '{key}'")
        return parse_field(default, f"{where}.{key}")
    return parse_field(table[key], f"{where}.{key}")


def _build_diffusion(table):
    where = "diffusion"
    d = int(table.get("dimension", 1))
    x0 = [float(v) for v in table.get("x0", [0.0] * d)]
    if len(x0) != d:
        raise ConfigError(f"{where}: x0 has {len(x0)} entries for d={d}")
    drift_in = table.get("drift", [0.0] * d)
    if len(drift_in) != d:
        raise ConfigError(f"{where}: drift needs {d} entries")
    drift = [parse_field(v, f"{where}.drift[{i}]")
             for i, v in enumerate(drift_in)]
    sigma_in = table.get("sigma")
    if sigma_in is None:
        sigma_in = [[1.0 if i == j else 0.0 for j in range(d)]
                    for i in range(d)]
    if len(sigma_in) != d or any(len(row) != d for row in sigma_in):
        raise ConfigError(f"{where}: sigma must be a {d}x{d} matrix")
    sigma = [[parse_field(v, f"{where}.sigma[{i}][{j}]")
              for j, v in enumerate(row)] for i, row in enumerate(sigma_in)]
    spec = DiffusionSpec(
        dimension=d, x0=np.asarray(x0, dtype=float), drift=drift,
        sigma=sigma,
        inverse_bound=float(table.get("inverse_bound", np.inf)))
    for i, e in enumerate(drift):
        check_axes(e, d, f"{where}.drift[{i}]")
    for i, row in enumerate(sigma):
        for j, e in enumerate(row):
            check_axes(e, d, f"{where}.sigma[{i}][{j}]")
    return spec


def _build_economy(tree, diffusion):
    etab = tree.get("economy")
    if etab is None:
        raise ConfigError("scenario is missing the [economy] section")
    stocks = []
    for i, stab in enumerate(tree.get("stocks", [])):
        where = f"stocks[{i}]"
        stocks.append(StockSpec(
            name=str(stab.get("name", f"stock_{i}")),
            terminal_payoff=_field(stab, "terminal_payoff", where),
            dividend_rate=_field(stab, "dividend_rate", where, default=0.0),
            dividend_growth=_field(stab, "dividend_growth", where,
                                   default=0.0)))
    agents = []
    for i, atab in enumerate(tree.get("agents", [])):
        where = f"agents[{i}]"
        utility = build_utility(atab.get("utility"), f"{where}.utility")
        terminal = atab.get("terminal_utility")
        terminal_u = (build_utility(terminal, f"{where}.terminal_utility")
                      if terminal is not None else utility)
        share = _field(atab, "income_share", where)
        tshare = (_field(atab, "terminal_share", where)
                  if "terminal_share" in atab else share)
        agents.append(AgentSpec(
            name=str(atab.get("name", f"agent_{i}")), utility=utility,
            terminal_utility=terminal_u, income_share=share,
            terminal_share=tshare))
    econ = EconomySpec(
        diffusion=diffusion,
        notional_payoff=_field(etab, "notional_payoff", "economy",
                               default=1.0),
        notional_growth=_field(etab, "notional_growth", "economy",
                               default=0.0),
        impatience=_field(etab, "impatience", "economy", default=0.0),
        log_terminal_endowment=_field(etab, "log_terminal_endowment",
                                      "economy"),
        log_income_rate=_field(etab, "log_income_rate", "economy",
                               default=0.0),
        stocks=stocks, agents=agents)
    for label, expr in (("notional_payoff", econ.notional_payoff),
                        ("notional_growth", econ.notional_growth),
                        ("impatience", econ.impatience),
                        ("log_terminal_endowment",
                         econ.log_terminal_endowment),
                        ("log_income_rate", econ.log_income_rate)):
        check_axes(expr, diffusion.dimension, f"economy.{label}")
    return econ


def _build_grids(tree, diffusion):
    gtab = tree.get("grid", {})
    n_times = int(gtab.get("n_times", 100))
    tgrid = TimeGrid.uniform(n_times)
    d = diffusion.dimension
    n_space = gtab.get("n_space", [201] * d)
    if isinstance(n_space, int):
        n_space = [n_space] * d
    if "lower" in gtab or "upper" in gtab:
        sgrid = SpatialGrid(
            lower=tuple(float(v) for v in gtab["lower"]),
            upper=tuple(float(v) for v in gtab["upper"]),
            npoints=tuple(int(n) for n in n_space))
    else:
        radius = gtab.get("radius", [5.0] * d)
        if isinstance(radius, (int, float)):
            radius = [float(radius)] * d
        sgrid = SpatialGrid.centered(diffusion.x0,
                                     tuple(float(r) for r in radius),
                                     tuple(int(n) for n in n_space))
    if sgrid.dimension != d:
        raise ConfigError("grid: spatial dimension does not match diffusion")
    return tgrid, sgrid


def _build_solver(tree, n_agents):
    stab = tree.get("solver", {})
    start = stab.get("start")
    multistart = stab.get("multistart", [])
    return SolverConfig(
        abs_tol=float(stab.get("abs_tol", 1e-9)),
        max_iter=int(stab.get("max_iter", 40)),
        fd_step=float(stab.get("fd_step", 1e-7)),
        max_backtracks=int(stab.get("max_backtracks", 8)),
        start=(np.asarray(start, dtype=float)
               if start is not None else None),
        multistart=[np.asarray(w, dtype=float) for w in multistart],
        rel_tol=float(stab.get("rel_tol", 1e-13)))


def _build_verify(tree):
    vtab = tree.get("verify", {})
    pairs = vtab.get("martingale_pairs", [[0.25, 0.75]])
    return VerifyConfig(
        clearing_tol=float(vtab.get("clearing_tol", 1e-8)),
        foc_tol=float(vtab.get("foc_tol", 1e-8)),
        pde_rel_tol=float(vtab.get("pde_rel_tol", 2e-3)),
        martingale_pairs=tuple((float(a), float(b)) for a, b in pairs),
        martingale_bins=int(vtab.get("martingale_bins", 8)),
        min_bin_count=int(vtab.get("min_bin_count", 25)),
        bin_pass_fraction=float(vtab.get("bin_pass_fraction", 0.9)))


def _build_completeness(tree):
    ctab = tree.get("completeness", {})
    base = CompletenessSettings()
    return CompletenessSettings(
        rel_tol=float(ctab.get("rel_tol", base.rel_tol)),
        fail_fraction_tol=float(ctab.get("fail_fraction_tol",
                                         base.fail_fraction_tol)),
        interior_fraction=float(ctab.get("interior_fraction",
                                         base.interior_fraction)),
        probe_paths=int(ctab.get("probe_paths", base.probe_paths)),
        probe_steps=int(ctab.get("probe_steps", base.probe_steps)),
        chunk_paths=int(ctab.get("chunk_paths", base.chunk_paths)),
        n_random_claims=int(ctab.get("n_random_claims",
                                     base.n_random_claims)),
        rel_rms_bound=float(ctab.get("rel_rms_bound", base.rel_rms_bound)),
        expect_rank_failure=bool(ctab.get("expect_rank_failure", False)))


def _build_references(tree, econ):
    refs = []
    names = [s.name for s in econ.stocks]
    for i, rtab in enumerate(tree.get("reference", [])):
        where = f"reference[{i}]"
        target = rtab.get("target")
        if target not in ("density", "numeraire", "stock"):
            raise ConfigError(f"{where}: unknown target '{target}'")
        stock = str(rtab.get("stock", ""))
        if target == "stock" and stock not in names:
            raise ConfigError(f"{where}: unknown stock '{stock}'")
        expr = _field(rtab, "field", where)
        check_axes(expr, econ.diffusion.dimension, f"{where}.field")
        refs.append(ReferenceSurface(
            target=target, expr=expr, stock=stock,
            max_rel_err=float(rtab.get("max_rel_err", 1e-3)),
            floor=float(rtab.get("floor", 0.0))))
    return refs


def scenario_from_tree(tree):
    if "name" not in tree:
        raise ConfigError("scenario is missing the top-level 'name'")
    diffusion = _build_diffusion(tree.get("diffusion", {}))
    econ = _build_economy(tree, diffusion)
    tgrid, sgrid = _build_grids(tree, diffusion)
    mc = tree.get("mc", {})
    return Scenario(
        name=str(tree["name"]),
        seed=int(tree.get("seed", 0)),
        econ=econ, tgrid=tgrid, sgrid=sgrid,
        n_paths=int(mc.get("n_paths", 20000)),
        solver=_build_solver(tree, econ.n_agents),
        verify=_build_verify(tree),
        completeness=_build_completeness(tree),
        references=_build_references(tree, econ),
        theta=float(tree.get("grid", {}).get("theta", 0.5)),
        tree=tree)


def load_scenario(path):
    with open(path, "rb") as fh:
        tree = tomllib.load(fh)
    try:
        return scenario_from_tree(tree)
    except ConfigError as exc:
        raise ConfigError(f"{Path(path).name}: {exc}") from exc


# ---------------------------------------------------------------------------
# Deterministic TOML emission


def _fmt_scalar(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return repr(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise ConfigError("TOML cannot represent nan/inf")
        text = repr(value)
        return text if ("." in text or "e" in text or "E" in text) \
            else text + ".0"
    if isinstance(value, str):
        import json
        # ensure_ascii would split astral characters into surrogate pairs,
        # which TOML escapes cannot express; DEL is the one control
        # character JSON leaves literal but TOML forbids
        return json.dumps(value, ensure_ascii=False).replace(
            "\x7f", "\\u007f")
    raise ConfigError(f"cannot emit {type(value).__name__} as TOML scalar")


def _fmt_value(value):
    if isinstance(value, dict):
        inner = ", ".join(f"{k} = {_fmt_value(v)}" for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt_value(v) for v in value) + "]"
    return _fmt_scalar(value)


def _emit_pairs(table, lines):
    for key, value in table.items():
        lines.append(f"{key} = {_fmt_value(value)}")


def scenario_to_toml(tree):
    """Deterministic TOML text for a parsed scenario tree.

    ``tomllib.loads(scenario_to_toml(tree)) == tree`` for every tree this
    package produces; floats are rendered with ``repr`` so values survive a
    round trip bit-for-bit.
    """
    lines = []
    scalars = {k: v for k, v in tree.items()
               if not isinstance(v, dict)
               and not (isinstance(v, list) and v
                        and isinstance(v[0], dict))}
    _emit_pairs(scalars, lines)
    for key, value in tree.items():
        if isinstance(value, dict):
            lines.append("")
            lines.append(f"[{key}]")
            _emit_pairs(value, lines)
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            for item in value:
                lines.append("")
                lines.append(f"[[{key}]]")
                _emit_pairs(item, lines)
    return "\n".join(lines) + "\n"
