"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (1),
bad data or shapes (2) and numerical failures (3).
"""


class AaccaError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(AaccaError, ValueError):
    exit_code = 1


class DataError(AaccaError, ValueError):
    exit_code = 2


class ShapeError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class ParseError(DataError):
    pass


class PairingError(DataError):
    pass


class InconsistentLabelError(DataError):
    pass


class InsufficientPointsError(DataError):
    pass


class DegenerateGridError(DataError):
    pass


class DegenerateLabelsError(DataError):
    pass


class NumericalError(AaccaError, ArithmeticError):
    exit_code = 3


class NotPositiveDefiniteError(NumericalError):
    """Cholesky factorization failed; increase the ridge."""


class DegenerateScaleError(NumericalError):
    pass


class DegenerateCorrelationError(NumericalError):
    """No canonical correlation survived the floor."""
