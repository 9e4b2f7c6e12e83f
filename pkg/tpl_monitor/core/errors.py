"""Exception hierarchy for monitoring operations.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Iterable, List, Optional, Tuple


class MonitorError(Exception):
    """Base class for all errors raised by tpl_monitor."""

    exit_code: int = 1


# Usage ----------------------------------------------------------------------

class UsageError(MonitorError):
    """Wrong method, missing input, or inconsistent command options."""

    exit_code = 2


class ArgumentError(UsageError, ValueError):
    """An argument lies outside the domain an operation accepts."""


# Data -----------------------------------------------------------------------

class DataError(MonitorError):
    """Input data is missing, malformed, or does not cover what is needed."""

    exit_code = 3


class SchemaError(DataError):
    """A required column is missing from a dataset file."""


class RowError(DataError):
    """One or more dataset rows failed to parse or validate."""

    def __init__(self, problems: Iterable[Tuple[int, str]]):
        self.problems: List[Tuple[int, str]] = list(problems)
        shown = "; ".join(f"line {line}: {msg}" for line, msg in self.problems[:10])
        more = len(self.problems) - 10
        if more > 0:
            shown += f"; ... {more} more"
        super().__init__(f"{len(self.problems)} invalid row(s): {shown}")


class EmptyDatasetError(DataError):
    """A dataset file holds no records."""


class InsufficientDataError(DataError):
    """Fewer samples, cells, designs or groups than an operation requires."""


class NoOverlapError(DataError):
    """Two grids share no (design, params) cell."""


class CoverageError(DataError):
    """The reference grid cannot support model fitting and trend regression."""

    def __init__(self, message: str, missing: Optional[List[str]] = None):
        self.missing = list(missing or [])
        if self.missing:
            message = f"{message} (lacking: {', '.join(self.missing)})"
        super().__init__(message)


class IncompleteThresholdError(DataError):
    """Not every model parameter has a threshold interval."""


# Numeric --------------------------------------------------------------------

class NumericError(MonitorError):
    """A computation is numerically degenerate."""

    exit_code = 4


class DegenerateVarianceError(NumericError):
    """A sample standard deviation is zero."""


class SingularCovarianceError(NumericError):
    """A sample covariance matrix is singular or ill-conditioned."""


class FitFailureError(NumericError):
    """No multi-start initialisation produced a finite least-squares fit."""


class BootstrapFailureError(NumericError):
    """Too many bootstrap iterations failed to refit."""


class ThresholdFailureError(NumericError):
    """A threshold interval would need widening beyond the configured cap."""


# Infeasibility --------------------------------------------------------------

class InfeasibleError(MonitorError):
    """Model parameters are outside the region where the dimension models are defined."""

    exit_code = 5


class ModelDomainError(InfeasibleError):
    """A dimension model was evaluated where its logarithm or root is not real."""


class ExtrapolationError(ModelDomainError):
    """Trend-evaluated parameters for an unseen design are infeasible."""
