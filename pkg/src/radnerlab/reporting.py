"""Light-weight report containers shared by the validation and verification
layers.  Everything is JSON-serializable so the runner can persist reports
as artifacts without bespoke encoders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def jsonable(obj):
    """Recursively convert numpy scalars/arrays to plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


@dataclass
class ValidationReport:
    """Outcome of a validation pass: named metrics, optional tables
    (e.g. an empirical continuity-modulus table), and human-readable
    violation strings.  ``passed`` is False iff violations were recorded."""

    name: str
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def flag(self, message):
        self.violations.append(str(message))

    def to_jsonable(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "metrics": jsonable(self.metrics),
            "tables": jsonable(self.tables),
            "violations": list(self.violations),
        }


@dataclass
class CheckResult:
    """A single verification check: statistic vs tolerance."""

    name: str
    statistic: float
    tolerance: float
    passed: bool
    se: float | None = None
    detail: dict = field(default_factory=dict)

    def to_jsonable(self):
        out = {
            "name": self.name,
            "statistic": jsonable(self.statistic),
            "tolerance": jsonable(self.tolerance),
            "passed": bool(self.passed),
        }
        if self.se is not None:
            out["se"] = jsonable(self.se)
        if self.detail:
            out["detail"] = jsonable(self.detail)
        return out


@dataclass
class VerificationSuiteResult:
    """Positive checks plus negative controls.  The suite passes iff every
    positive check passes; ``controls_ok`` additionally demands that each
    deliberately corrupted input made its check fail."""

    checks: list = field(default_factory=list)
    negative_controls: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def controls_ok(self):
        return all(not c.passed for c in self.negative_controls)

    def to_jsonable(self):
        return {
            "passed": self.passed,
            "controls_ok": self.controls_ok,
            "checks": [c.to_jsonable() for c in self.checks],
            "negative_controls": [c.to_jsonable()
                                  for c in self.negative_controls],
        }
