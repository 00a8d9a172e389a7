"""Exception hierarchy for the OD-TTE lab.

Every error carries the CLI exit code it maps to:
    1  usage, configuration or contract violation
    2  data, parse, range or checkpoint problem
    3  numerical failure (divergence, calibration, non-finite values)
"""

from typing import Optional


class OdtteError(Exception):
    """Base class for all lab errors."""
    exit_code: int = 1


class ContractError(OdtteError, ValueError):
    """A precondition of an operation was violated by the caller."""
    exit_code = 1


class ShapeError(ContractError):
    """Tensor shapes or channel counts do not line up."""


class ConfigurationError(OdtteError, ValueError):
    """A configuration value or model spec breaks one of its invariants."""
    exit_code = 1


class AutogradError(OdtteError, RuntimeError):
    """Internal inconsistency of the recorded computation (e.g. a cycle)."""
    exit_code = 3


class DomainError(OdtteError, ValueError):
    """An input lies outside the mathematical domain of a function."""
    exit_code = 2


class FeatureRangeError(DomainError):
    """A record field falls outside the configured bounding box or range."""

    def __init__(self, field: str, value: float, low: float, high: float):
        self.field = field
        self.value = value
        self.low = low
        self.high = high
        super().__init__(f"{field}={value!r} outside [{low}, {high}]")


class ParseError(OdtteError, ValueError):
    """A data file could not be parsed."""
    exit_code = 2

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class CheckpointError(OdtteError, IOError):
    """A model checkpoint is missing, corrupt or of an unknown version."""
    exit_code = 2


class NumericalError(OdtteError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""
    exit_code = 3


class CalibrationError(NumericalError):
    """Synthetic generator coefficients cannot produce valid durations."""


class DivergenceError(NumericalError):
    """Training loss became non-finite.

    ``last_good`` holds the parameter values of the best epoch seen before
    the failure, keyed by parameter name.
    """

    def __init__(self, message: str, epoch: int, last_good: Optional[dict] = None):
        self.epoch = epoch
        self.last_good = last_good or {}
        super().__init__(message)
