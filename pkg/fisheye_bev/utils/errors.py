"""
Exception hierarchy for the fisheye BEV engine.

Validation failures derive from ValueError so callers that already guard
parsing with ``except ValueError`` keep working. Commands translate the
hierarchy into process exit codes with ``exit_code_for``.
"""

from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class ValidationError(ValueError):
    """Input rejected before or during computation."""


class ConfigError(ValidationError):
    """Invalid configuration, rig file, grid or depth-bin definition."""


class ShapeError(ValidationError):
    """Array dimensions disagree."""


class DomainError(ValidationError):
    """Value outside the mathematical domain of an operation."""


class OutOfImageError(DomainError):
    """Radius beyond the image of a distortion model's valid angle range."""


class OutOfFovError(DomainError):
    """Pixel outside the camera's theta_max cone."""


class DataError(ValidationError):
    """Malformed data: NaN features, unknown class ids, corrupt tensor files."""


class GenerationError(ValidationError):
    """Scene constraints could not be satisfied within the retry budget."""


class NumericError(ArithmeticError):
    """An iterative numeric procedure failed."""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class TrainingError(NumericError):
    """Training diverged (non-finite loss or parameters)."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class UsageError(RuntimeError):
    """API used out of order, e.g. backward without a retained forward pass."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the command-line exit-code contract (0/2/3)."""
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    return EXIT_USAGE
