"""Staged pipeline runner: stage ordering, artifact layout, deterministic
serialization, and the binary surface dump format."""

import json

import numpy as np
import pytest

from radnerlab import scenario_from_tree
from radnerlab.runner import (STAGES, read_surface_binary, run_scenario,
                              write_csv, write_surface_binary)

from conftest import load_tree, shrink_tree


def small_degenerate_tree():
    return shrink_tree(load_tree("degenerate-flat"), n_times=50,
                       n_space=201, n_paths=3000)


@pytest.fixture(scope="module")
def degenerate_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("degenerate") / "run"
    sc = scenario_from_tree(small_degenerate_tree())
    outcome = run_scenario(sc, outdir, "report")
    return sc, outdir, outcome


def test_all_stages_execute_and_pass(degenerate_run):
    _, _, outcome = degenerate_run
    assert tuple(s.name for s in outcome.stages) == STAGES
    assert outcome.passed
    assert all(s.passed for s in outcome.stages)


def test_artifacts_exist_on_disk(degenerate_run):
    _, outdir, outcome = degenerate_run
    for path in outcome.artifacts:
        assert (outdir / path).exists() or (outdir / path).is_absolute()
    names = sorted((p.name for p in outdir.iterdir()))
    for expected in ("run.json", "summary.csv", "weights.csv",
                     "validation.json", "verification.json",
                     "dispersion.csv", "density.bin", "density.csv",
                     "numeraire.bin", "stock_flat.bin", "agent_solo.bin"):
        assert expected in names


def test_run_manifest_structure(degenerate_run):
    _, outdir, outcome = degenerate_run
    manifest = json.loads((outdir / "run.json").read_text())
    assert manifest["scenario"] == "degenerate-flat"
    assert manifest["command"] == "report"
    assert manifest["passed"] is True
    assert [s["name"] for s in manifest["stages"]] == list(STAGES)
    assert all(s["error"] == "" for s in manifest["stages"])
    assert manifest["artifacts"] == sorted(manifest["artifacts"])
    on_disk = {p.name for p in outdir.iterdir()} - {"run.json"}
    assert set(manifest["artifacts"]) == on_disk


def test_expected_rank_failure_counts_as_pass(degenerate_run):
    _, outdir, _ = degenerate_run
    ver = json.loads((outdir / "verification.json").read_text())
    assert ver["expect_rank_failure"] is True
    assert ver["dispersion"]["passed"] is False
    assert ver["replication_probe"] == {
        "skipped": "market is not dynamically complete"}
    assert ver["suite"]["passed"] is True
    assert ver["suite"]["controls_ok"] is True


def test_summary_lists_every_check_and_control(degenerate_run):
    _, outdir, _ = degenerate_run
    lines = (outdir / "summary.csv").read_text().splitlines()
    assert lines[0] == "section,name,statistic,tolerance,passed"
    sections = [line.split(",")[0] for line in lines[1:]]
    for expected in ("stage", "check", "control", "completeness"):
        assert expected in sections
    # every row of the summary of a passing run reports true
    assert all(line.rsplit(",", 1)[1] == "true" for line in lines[1:])


def test_partial_command_stops_after_requested_stage(tmp_path):
    sc = scenario_from_tree(small_degenerate_tree())
    outcome = run_scenario(sc, tmp_path, "solve")
    assert tuple(s.name for s in outcome.stages) == ("validate", "solve")
    names = {p.name for p in tmp_path.iterdir()}
    assert "weights.csv" in names and "run.json" in names
    assert "density.bin" not in names          # price stage never ran
    manifest = json.loads((tmp_path / "run.json").read_text())
    assert manifest["command"] == "solve"


def test_rerun_is_byte_identical(degenerate_run, tmp_path):
    _, outdir, _ = degenerate_run
    sc = scenario_from_tree(small_degenerate_tree())
    run_scenario(sc, tmp_path, "report")
    names = sorted(p.name for p in outdir.iterdir())
    assert names == sorted(p.name for p in tmp_path.iterdir())
    for name in names:
        assert (outdir / name).read_bytes() == (tmp_path / name).read_bytes()


def test_unexpected_rank_failure_fails_the_check_stage(tmp_path):
    tree = small_degenerate_tree()
    tree["completeness"]["expect_rank_failure"] = False
    sc = scenario_from_tree(tree)
    outcome = run_scenario(sc, tmp_path, "check")
    assert not outcome.stage("check").passed
    assert not outcome.passed
    # the validate stage now also flags the rank-deficient payoff map
    assert not outcome.stage("validate").passed


# ---------------------------------------------------------------------------
# serialization primitives


def test_surface_binary_round_trip(degenerate_run, tmp_path):
    _, outdir, _ = degenerate_run
    times, axes, values = read_surface_binary(outdir / "density.bin")
    assert times.shape == (50,)
    assert len(axes) == 1 and axes[0].shape == (201,)
    assert values.shape == (50, 201)
    # writing the recovered surface again reproduces the bytes
    class Box:
        pass
    box = Box()
    box.times = times
    box.values = values
    box.sgrid = type("G", (), {
        "dimension": 1, "npoints": (201,),
        "axes": staticmethod(lambda: axes)})()
    path = tmp_path / "again.bin"
    write_surface_binary(path, box)
    assert path.read_bytes() == (outdir / "density.bin").read_bytes()


def test_surface_binary_rejects_foreign_files(tmp_path):
    path = tmp_path / "noise.bin"
    path.write_bytes(b"NOTASURF" + b"\0" * 64)
    with pytest.raises(ValueError, match="not a surface dump"):
        read_surface_binary(path)


def test_surface_binary_rejects_future_versions(degenerate_run, tmp_path):
    _, outdir, _ = degenerate_run
    raw = bytearray((outdir / "density.bin").read_bytes())
    raw[8] = 2                                 # bump the version field
    path = tmp_path / "future.bin"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version 2"):
        read_surface_binary(path)


def test_csv_cells_render_deterministically(tmp_path):
    path = tmp_path / "cells.csv"
    write_csv(path, ["a", "b", "c"],
              [[0.1, True, "x"], [np.float64(2.0), False, 3]])
    assert path.read_text() == "a,b,c\n0.1,true,x\n2.0,false,3\n"
