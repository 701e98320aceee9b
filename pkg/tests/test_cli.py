"""Command-line front end: flag parsing, overrides, exit codes, and one
end-to-end subprocess run."""

import argparse
import json
import subprocess
import sys

import pytest

from radnerlab import scenario_to_toml
from radnerlab.cli import _apply_overrides, _parse_grid, build_parser, main

from conftest import ROOT, load_tree, shrink_tree


def write_small_scenario(tmp_path, **completeness):
    tree = shrink_tree(load_tree("degenerate-flat"), n_times=50,
                       n_space=201, n_paths=3000)
    tree["completeness"].update(completeness)
    path = tmp_path / "small.toml"
    path.write_text(scenario_to_toml(tree))
    return path


# ---------------------------------------------------------------------------
# flag parsing


def test_parser_declares_the_documented_flags():
    parser = build_parser()
    flags = {a.option_strings[0] for a in parser._actions
             if a.option_strings}
    assert {"--scenario", "--out", "--seed", "--paths", "--grid",
            "--command"} <= flags


def test_parse_grid_accepts_time_by_space():
    assert _parse_grid("100x200") == (100, [200])
    assert _parse_grid("40x81x61") == (40, [81, 61])
    assert _parse_grid("40X81") == (40, [81])      # case-insensitive


@pytest.mark.parametrize("bad", ["", "100", "axb", "100x1", "0x50",
                                 "100x200x"])
def test_parse_grid_rejects_malformed_values(bad):
    with pytest.raises(SystemExit, match="--grid expects"):
        _parse_grid(bad)


def make_args(**kw):
    base = dict(seed=None, paths=None, grid=None)
    base.update(kw)
    return argparse.Namespace(**base)


def test_overrides_rewrite_the_tree():
    tree = {"name": "x", "diffusion": {"dimension": 2}}
    out = _apply_overrides(tree, make_args(seed=7, paths=500, grid="30x41"))
    assert out["seed"] == 7
    assert out["mc"]["n_paths"] == 500
    assert out["grid"]["n_times"] == 30
    assert out["grid"]["n_space"] == [41, 41]      # broadcast to both axes


def test_overrides_leave_untouched_fields_alone():
    tree = {"name": "x", "seed": 3, "mc": {"n_paths": 9}}
    out = _apply_overrides(tree, make_args())
    assert out == {"name": "x", "seed": 3, "mc": {"n_paths": 9}}


def test_override_grid_dimension_mismatch_exits():
    tree = {"name": "x", "diffusion": {"dimension": 2}}
    with pytest.raises(SystemExit, match="2-dimensional"):
        _apply_overrides(tree, make_args(grid="30x41x51x61"))


# ---------------------------------------------------------------------------
# exit codes (in-process)


def test_main_returns_zero_on_a_passing_run(tmp_path, capsys):
    scenario = write_small_scenario(tmp_path)
    out = tmp_path / "run"
    code = main(["--scenario", str(scenario), "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "[  ok] validate" in text and "[  ok] report" in text
    assert str(out) in text
    assert (out / "run.json").exists()


def test_main_returns_one_when_a_stage_fails(tmp_path, capsys):
    scenario = write_small_scenario(tmp_path, expect_rank_failure=False)
    code = main(["--scenario", str(scenario), "--out", str(tmp_path / "r"),
                 "--command", "validate"])
    assert code == 1
    assert "[FAIL] validate" in capsys.readouterr().out


def test_main_returns_two_on_missing_file(tmp_path, capsys):
    code = main(["--scenario", str(tmp_path / "absent.toml")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_main_returns_two_on_invalid_config(tmp_path, capsys):
    path = tmp_path / "broken.toml"
    path.write_text('name = "broken"\n')       # no [economy] section
    code = main(["--scenario", str(path), "--out", str(tmp_path / "r")])
    assert code == 2
    assert "economy" in capsys.readouterr().err


def test_seed_override_changes_the_artifacts(tmp_path):
    scenario = write_small_scenario(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["--scenario", str(scenario), "--out", str(a),
                 "--command", "solve"]) == 0
    assert main(["--scenario", str(scenario), "--out", str(b),
                 "--command", "solve", "--seed", "77"]) == 0
    assert main(["--scenario", str(scenario), "--out", str(c),
                 "--command", "solve", "--seed", "77"]) == 0
    weights = [(p / "weights.csv").read_bytes() for p in (a, b, c)]
    assert weights[1] == weights[2]            # same seed, same bytes
    # single-agent weights are trivially [1.0]; the residual column moves
    runs = [json.loads((p / "run.json").read_text()) for p in (a, b, c)]
    assert all(r["passed"] for r in runs)


def test_module_entrypoint_runs_in_a_subprocess(tmp_path):
    scenario = write_small_scenario(tmp_path)
    out = tmp_path / "sub"
    proc = subprocess.run(
        [sys.executable, "-m", "radnerlab", "--scenario", str(scenario),
         "--out", str(out), "--command", "validate"],
        capture_output=True, text=True, cwd=ROOT)
    assert proc.returncode == 0, proc.stderr
    assert "[  ok] validate" in proc.stdout
    assert (out / "validation.json").exists()
