"""Exception hierarchy.

Every error carries a short machine-readable ``code``; the CLI maps the
two families below onto exit codes 1 (validation) and 2 (numeric).
"""

from __future__ import annotations


class CompoLayoutError(Exception):
    code = "error"


class ValidationError(CompoLayoutError, ValueError):
    """Input violates a documented precondition."""

    code = "invalid-input"


class NumericError(CompoLayoutError, ArithmeticError):
    """A computation produced a non-finite value."""

    code = "numeric"


class ExtentZeroError(ValidationError):
    code = "extent-zero"


class EmptyMaskError(ValidationError):
    code = "empty-mask"


class EmptySilhouetteError(ValidationError):
    code = "empty-silhouette"


class EmptyCloudError(ValidationError):
    code = "empty-cloud"


class InvalidStepError(ValidationError):
    code = "invalid-step"


class IncompatibleFeatureError(ValidationError):
    code = "incompatible-feature"


class ScheduleExhaustedError(ValidationError):
    code = "schedule-exhausted"


class FormatError(ValidationError):
    code = "format"


class ParseError(FormatError):
    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ExtractorError(CompoLayoutError):
    """Feature extraction failed while scanning a pose grid."""

    code = "extractor"

    def __init__(self, pose, cause: Exception):
        super().__init__(f"feature extraction failed at {pose}: {cause}")
        self.pose = pose
        self.__cause__ = cause


class OptimizationError(NumericError):
    """Raised when a loss goes non-finite; ``trace`` holds the iterations run so far."""

    code = "non-finite-loss"

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
