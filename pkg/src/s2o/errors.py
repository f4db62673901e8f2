"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Domain object violates an invariant (bad geometry, bad timestamps, ...)."""


class CaseLogError(ValueError):
    """Case-log text could not be parsed.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StreamOrderError(ValidationError):
    """Frame arrived with a timestamp not after the previous one."""


class DegenerateGeometryError(ValidationError):
    """Two positions coincide where a direction or distance is required."""


class FitError(ValueError):
    """Calibration / fitting preconditions not met (degenerate column, thin segment, ...)."""
