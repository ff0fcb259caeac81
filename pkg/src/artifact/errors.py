"""Exception types shared by the library and the command line.

Every error carries a short machine-readable ``code`` so the CLI can map it
to an exit status without string matching.
"""

from __future__ import annotations


class ArtifactError(Exception):
    code = "error"


class ConfigError(ArtifactError):
    """Invalid user input: malformed JSON, schema violations, bad bundle data."""

    code = "config"

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class NonPositiveMetric(ArtifactError):
    code = "non_positive_metric"


class NonPositiveWeight(ArtifactError):
    code = "non_positive_weight"


class InversionMismatch(ArtifactError):
    code = "inversion_mismatch"


class BackendMismatch(ArtifactError):
    code = "backend_mismatch"


class DegenerateDenominator(ArtifactError):
    code = "degenerate_denominator"


class NegativeTwist(ArtifactError):
    code = "negative_twist"


class FitDiverged(ArtifactError):
    code = "fit_diverged"


class Inconclusive(ArtifactError):
    code = "inconclusive"


class NotSolvable(ArtifactError):
    code = "not_solvable"


class NewtonDiverged(ArtifactError):
    code = "newton_diverged"

    def __init__(self, message: str, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class PreconditionWeight(ArtifactError):
    code = "precondition_weight"


class WrongFamily(ArtifactError):
    code = "wrong_family"


class DeformationStuck(ArtifactError):
    code = "deformation_stuck"

    def __init__(self, message: str, last_t: float):
        super().__init__(message)
        self.last_t = last_t


class EmptySeries(ArtifactError):
    code = "empty_series"


class TruncationWarning(UserWarning):
    """Fourier integral truncated with an estimated error above tolerance."""
