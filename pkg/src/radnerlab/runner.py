"""Staged scenario runner.

Stages run cumulatively in a fixed order:

``validate``
    Coefficient bounds, payoff-rank and growth diagnostics, utility cone
    probes on a small diagnostic path bundle.
``solve``
    Full Monte Carlo bundle, pathwise primitives, equilibrium weights.
``price``
    Pricing kernels and all Feynman-Kac surfaces; surface artifacts.
``check``
    Verification suite with negative controls, dispersion rank sweep,
    replication probe.
``report``
    Reference-surface comparisons and the one-line-per-check summary.

Every artifact is deterministic for a fixed scenario file: floats are
rendered with ``repr``, orderings are fixed, and nothing time- or
machine-dependent is written.  ``run_scenario`` returns a ``RunOutcome``
whose ``passed`` is True only when every executed stage passed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .completeness import dispersion, martingale_uniqueness_probe
from .diffusion import simulate_paths, validate_coefficients
from .economy import evaluate_primitives, validate_assumptions
from .errors import LabError
from .negishi import solve_weights
from .pricing import build_solution
from .reporting import jsonable
from .scenario import Scenario, load_scenario
from .utilities import cone_diagnostics
from .verify import run_suite

STAGES = ("validate", "solve", "price", "check", "report")


@dataclass
class StageResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class RunOutcome:
    scenario: str
    stages: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)

    @property
    def passed(self):
        return all(s.passed for s in self.stages)

    def stage(self, name):
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)


def _fmt(value):
    """Deterministic CSV cell: repr for floats, plain text otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_surface_csv(path, surface):
    """Long-format dump: one row per (time level, grid node)."""
    sgrid = surface.sgrid
    nodes = sgrid.flat_states()
    header = ["t"] + [f"x{i}" for i in range(sgrid.dimension)] + ["value"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(surface.times):
            level = surface.values[k].ravel()
            t_txt = repr(float(t))
            for n in range(nodes.shape[0]):
                coord = ",".join(repr(float(c)) for c in nodes[n])
                fh.write(f"{t_txt},{coord},{repr(float(level[n]))}\n")


_SURFACE_MAGIC = b"RLABSURF"


def write_surface_binary(path, surface):
    """Compact dump: header (magic, version, level count, dimension, points
    per axis as little-endian uint32) followed by float64 time levels, axis
    coordinates, and C-ordered values."""
    sgrid = surface.sgrid
    with open(path, "wb") as fh:
        fh.write(_SURFACE_MAGIC)
        fh.write(struct.pack("<III", 1, surface.times.size, sgrid.dimension))
        fh.write(struct.pack(f"<{sgrid.dimension}I", *sgrid.npoints))
        fh.write(np.asarray(surface.times, dtype="<f8").tobytes())
        for axis in sgrid.axes():
            fh.write(np.asarray(axis, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(surface.values, dtype="<f8").tobytes())


def read_surface_binary(path):
    """Inverse of ``write_surface_binary``: (times, axes, values)."""
    raw = Path(path).read_bytes()
    if raw[:8] != _SURFACE_MAGIC:
        raise ValueError("not a surface dump")
    version, n_times, dim = struct.unpack_from("<III", raw, 8)
    if version != 1:
        raise ValueError(f"unsupported surface dump version {version}")
    npoints = struct.unpack_from(f"<{dim}I", raw, 20)
    off = 20 + 4 * dim
    times = np.frombuffer(raw, dtype="<f8", count=n_times, offset=off)
    off += 8 * n_times
    axes = []
    for n in npoints:
        axes.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off))
        off += 8 * n
    count = n_times * int(np.prod(npoints))
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    return times, axes, values.reshape((n_times,) + tuple(npoints))


class _Run:
    """Mutable state threaded through the stages."""

    def __init__(self, scenario: Scenario, outdir: Path):
        self.scenario = scenario
        self.outdir = outdir
        self.outcome = RunOutcome(scenario=scenario.name)
        self.bundle = None
        self.primitives = None
        self.solve_result = None
        self.solution = None
        self.suite = None
        self.dispersion = None
        self.probe = None
        self.reference_rows = []

    def artifact(self, name):
        path = self.outdir / name
        self.outcome.artifacts.append(str(path))
        return path


def _stage_validate(run: _Run):
    sc = run.scenario
    coeff = validate_coefficients(sc.econ.diffusion, sc.sgrid, sc.tgrid)
    diag_bundle = simulate_paths(sc.econ.diffusion, sc.tgrid,
                                 min(2000, sc.n_paths), sc.seed)
    evaluate_primitives(sc.econ, diag_bundle)
    assumptions = validate_assumptions(sc.econ, sc.sgrid, sc.tgrid,
                                       bundle=diag_bundle)
    probes_t = np.repeat(np.linspace(0.0, 1.0, 5), 40)
    nodes = sc.sgrid.flat_states()
    picks = nodes[:: max(1, nodes.shape[0] // 40)][:40]
    probes_x = np.tile(picks, (5, 1))
    income = np.exp(sc.econ.log_income_rate(probes_t, probes_x))
    agents = {}
    for spec in sc.econ.agents:
        agents[spec.name] = {
            "running": cone_diagnostics(spec.utility, probes_t,
                                        income, probes_x),
            "terminal": cone_diagnostics(spec.terminal_utility, 1.0,
                                         income, probes_x),
        }
    violations = assumptions.violations
    if sc.completeness.expect_rank_failure:
        violations = [v for v in violations
                      if not v.startswith("terminal payoff map is rank")]
    passed = coeff.passed and not violations and all(
        pair["running"].passed and pair["terminal"].passed
        for pair in agents.values())
    write_json(run.artifact("validation.json"), {
        "coefficients": coeff.to_jsonable(),
        "assumptions": assumptions.to_jsonable(),
        "agents": {name: {k: r.to_jsonable() for k, r in pair.items()}
                   for name, pair in agents.items()},
    })
    return StageResult("validate", passed, {
        "coefficients": coeff, "assumptions": assumptions})


def _stage_solve(run: _Run):
    sc = run.scenario
    run.bundle = simulate_paths(sc.econ.diffusion, sc.tgrid, sc.n_paths,
                                sc.seed)
    run.primitives = evaluate_primitives(sc.econ, run.bundle)
    run.solve_result = solve_weights(run.primitives, sc.econ.utilities(),
                                     sc.econ.terminal_utilities(), sc.solver)
    m = sc.econ.n_agents
    header = (["iter", "residual", "step", "pathwise_sum_max"]
              + [f"w_{i}" for i in range(m)])
    rows = []
    for entry in run.solve_result.trace:
        rows.append([entry["iter"], entry["residual"], entry["step"],
                     entry["pathwise_sum_max"]]
                    + [entry["weights"][i] for i in range(m)])
    write_csv(run.artifact("weights.csv"), header, rows)
    return StageResult("solve", run.solve_result.converged, {
        "weights": run.solve_result.weights,
        "residual": run.solve_result.residual,
        "iterations": run.solve_result.n_iter})


def _stage_price(run: _Run):
    sc = run.scenario
    run.solution = build_solution(sc.econ, sc.tgrid.times, sc.sgrid,
                                  run.solve_result, theta=sc.theta)
    named = [("density", run.solution.density_surface),
             ("numeraire", run.solution.numeraire_state_surface)]
    named += [(f"stock_{s.name}", run.solution.stock_surfaces[j])
              for j, s in enumerate(sc.econ.stocks)]
    named += [(f"agent_{a.name}", run.solution.agent_surfaces[m])
              for m, a in enumerate(sc.econ.agents)]
    for name, surface in named:
        write_surface_csv(run.artifact(f"{name}.csv"), surface)
        write_surface_binary(run.artifact(f"{name}.bin"), surface)
    gap = run.solution.diagnostics.get("reaction_identity_gap", 0.0)
    return StageResult("price", True, {"reaction_identity_gap": gap})


def _stage_check(run: _Run):
    sc = run.scenario
    cs = sc.completeness
    run.suite = run_suite(run.solution, run.primitives, sc.verify)
    run.dispersion = dispersion(run.solution, rel_tol=cs.rel_tol,
                                fail_fraction_tol=cs.fail_fraction_tol,
                                interior_fraction=cs.interior_fraction)
    probe_payload = {"skipped": "market is not dynamically complete"}
    if run.dispersion.passed:
        run.probe = martingale_uniqueness_probe(
            run.solution, run.dispersion, seed=sc.seed + 1,
            n_random_claims=cs.n_random_claims, n_paths=cs.probe_paths,
            n_steps=cs.probe_steps, chunk_paths=cs.chunk_paths,
            rel_rms_bound=cs.rel_rms_bound, theta=sc.theta)
        probe_payload = run.probe.to_jsonable()
    if cs.expect_rank_failure:
        completeness_ok = not run.dispersion.passed
    else:
        completeness_ok = run.dispersion.passed and run.probe.passed
    passed = (run.suite.passed and run.suite.controls_ok
              and completeness_ok)
    write_json(run.artifact("verification.json"), {
        "suite": run.suite.to_jsonable(),
        "dispersion": run.dispersion.to_jsonable(),
        "replication_probe": probe_payload,
        "expect_rank_failure": cs.expect_rank_failure,
    })
    write_csv(run.artifact("dispersion.csv"),
              ["t", "min_sigma_min", "median_sigma_min", "fail_count",
               "n_nodes"],
              [[row["time"], row["min_sigma_min"], row["median_sigma_min"],
                row["fail_count"], row["n_nodes"]]
               for row in run.dispersion.per_level])
    return StageResult("check", passed, {
        "suite": run.suite, "dispersion": run.dispersion,
        "probe": run.probe})


def _reference_errors(run: _Run):
    """Max relative error of each solved surface against its closed form,
    over interior nodes (central half per axis; the numeraire comparison
    skips the terminal level, where the numeraire is the notional payoff
    rather than the smooth time limit)."""
    sc = run.scenario
    rows = []
    mask = sc.sgrid.interior_mask(0.5).ravel()
    nodes = sc.sgrid.flat_states()[mask]
    for ref in sc.references:
        if ref.target == "density":
            surface = run.solution.density_surface
        elif ref.target == "numeraire":
            surface = run.solution.numeraire_state_surface
        else:
            index = [s.name for s in sc.econ.stocks].index(ref.stock)
            surface = run.solution.stock_surfaces[index]
        n_levels = surface.times.size
        if ref.target == "numeraire":
            n_levels -= 1
        worst = 0.0
        for k in range(n_levels):
            got = surface.values[k].ravel()[mask]
            want = ref.expr(float(surface.times[k]), nodes)
            denom = np.maximum(np.abs(want), max(ref.floor, 1e-300))
            worst = max(worst, float((np.abs(got - want) / denom).max()))
        rows.append([ref.target, ref.stock, worst, ref.max_rel_err,
                     worst <= ref.max_rel_err])
    return rows


def _stage_report(run: _Run):
    sc = run.scenario
    rows = []
    for stage in run.outcome.stages:
        rows.append(["stage", stage.name, "", "", stage.passed])
    for check in run.suite.checks:
        rows.append(["check", check.name, check.statistic, check.tolerance,
                     check.passed])
    for check in run.suite.negative_controls:
        rows.append(["control", check.name, check.statistic,
                     check.tolerance, not check.passed])
    rows.append(["completeness", "dispersion",
                 run.dispersion.fail_fraction,
                 run.dispersion.fail_fraction_tol,
                 run.dispersion.passed != sc.completeness.expect_rank_failure])
    if run.probe is not None:
        rows.append(["completeness", "replication_probe", run.probe.worst,
                     run.probe.bound, run.probe.passed])
    passed = True
    if sc.references:
        ref_rows = _reference_errors(run)
        write_csv(run.artifact("reference_errors.csv"),
                  ["target", "stock", "max_rel_err", "tolerance", "passed"],
                  ref_rows)
        passed = all(r[-1] for r in ref_rows)
        for r in ref_rows:
            rows.append(["reference", r[0] if not r[1] else f"{r[0]}:{r[1]}",
                         r[2], r[3], r[4]])
    rows.append(["stage", "report", "", "", passed])
    write_csv(run.artifact("summary.csv"),
              ["section", "name", "statistic", "tolerance", "passed"], rows)
    return StageResult("report", passed)


_STAGE_FUNCS = {
    "validate": _stage_validate,
    "solve": _stage_solve,
    "price": _stage_price,
    "check": _stage_check,
    "report": _stage_report,
}


def run_scenario(scenario, outdir, command="all"):
    """Execute stages up to and including ``command`` ("all" runs every
    stage).  Accepts a Scenario or a path to a scenario file."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    last = len(STAGES) - 1 if command == "all" else STAGES.index(command)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    run = _Run(scenario, outdir)
    for name in STAGES[: last + 1]:
        try:
            result = _STAGE_FUNCS[name](run)
        except LabError as exc:
            result = StageResult(name, False, {
                "error": f"{type(exc).__name__}: {exc}"})
            run.outcome.stages.append(result)
            break
        run.outcome.stages.append(result)
    write_json(outdir / "run.json", {
        "scenario": scenario.name,
        "command": command,
        "passed": run.outcome.passed,
        "stages": [{"name": s.name, "passed": s.passed,
                    "error": s.detail.get("error", "")}
                   for s in run.outcome.stages],
        "artifacts": sorted(Path(p).name for p in run.outcome.artifacts),
    })
    return run.outcome
