"""End-to-end run of a scenario file, the same path the command line takes.

Stages: validate (coefficients, structural assumptions, utility cones),
solve (Monte Carlo bundle + planner weights), price (all backward
surfaces, artifacts), check (verification suite with negative controls,
rank sweep, replication probe), report (summary and any closed-form
references).  Artifacts land in a directory and are bitwise
reproducible for a fixed scenario file.
"""

import pathlib
import sys

from radnerlab import run_scenario


def main():
    scenario = sys.argv[1] if len(sys.argv) > 1 \
        else "scenarios/symmetric-pair.toml"
    outdir = pathlib.Path("runs") / "demo"
    outcome = run_scenario(scenario, outdir, "report")

    for stage in outcome.stages:
        mark = "ok" if stage.passed else "FAIL"
        print(f"[{mark:>4}] {stage.name}")

    summary = outdir / "summary.csv"
    print("\n" + summary.read_text(), end="")
    print("\noverall:", "PASS" if outcome.passed else "FAIL")
    return 0 if outcome.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
