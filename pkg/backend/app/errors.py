"""Exception hierarchy shared by the services, the CLI and the API."""

from typing import Optional


class IntervalBenchError(Exception):
    """Base class for every error raised on purpose by this package."""


class DataError(IntervalBenchError, ValueError):
    """Bad input data: unreadable CSV, non-numeric cell, invalid split or synthetic spec."""

    def __init__(self, message: str, *, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(IntervalBenchError, ValueError):
    """Experiment config or method descriptor cannot be resolved."""


class TrainingDivergedError(IntervalBenchError, RuntimeError):
    def __init__(self, message: str, *, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class EmptySubensembleError(IntervalBenchError, ValueError):
    """oob(i) was requested but every tree saw index i."""

    def __init__(self, index: int):
        super().__init__(f"Training index {index} has no out-of-bag trees")
        self.index = index


class FactorizationError(IntervalBenchError, RuntimeError):
    """Cholesky factorization failed even at the largest jitter."""


class CalibrationError(IntervalBenchError, ValueError):
    """Calibration cannot proceed (empty set, bad dispersion, overlap with training rows)."""


class BudgetExceededError(IntervalBenchError, RuntimeError):
    """A method cannot finish within its configured size or time budget."""
