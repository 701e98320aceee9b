"""Exception taxonomy shared across the package.

Every failure raised deliberately by this package derives from LabError, so
callers can distinguish model/configuration problems from genuine bugs.
"""


class LabError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(LabError):
    """Invalid configuration: malformed scenario fields, impossible sizes,
    all-zero weights, unsupported dimensions."""


class EvaluationError(LabError):
    """A model function produced a non-finite or out-of-domain value."""


class PrimitiveError(LabError):
    """A primitive process violated positivity along a simulated path."""


class SplitterError(LabError):
    """A consumption split could not be bracketed or refined; usually signals
    a marginal utility that violates the Inada conditions."""


class SolverError(LabError):
    """A linear-algebra or time-stepping solve became unstable or produced an
    unusable surface."""


class NonConvergence(LabError):
    """An iterative solver hit its iteration cap.  Carries the best iterate
    and the iteration trace for post-mortem inspection."""

    def __init__(self, message, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace if trace is not None else []


class BoundaryError(LabError):
    """Weight iterates collapsed onto the simplex boundary and stayed there."""


class CompletenessError(LabError):
    """A rank-deficient dispersion matrix was found where full rank is
    required (market not dynamically complete at some node)."""
