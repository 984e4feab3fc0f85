"""Exception types raised across the package."""

from __future__ import annotations

from typing import Any


class ICSError(ValueError):
    """Base class for data and numerical errors."""


class SchemaError(ICSError):
    """A required column is missing or the schema is inconsistent."""


class ParseError(ICSError):
    """A cell could not be parsed; carries the 1-based file row number."""

    def __init__(self, message: str, row: int | None = None) -> None:
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class EmptyInputError(ICSError):
    """No observations were supplied."""


class CensoredDataError(ICSError):
    """Censored observations reached an estimator that cannot use them."""


class DegenerateTestError(ICSError):
    """The variance estimate of a test statistic is zero."""


class UndefinedCorrelationError(ICSError):
    """A marginal variance is zero, so the correlation is undefined."""


class RankError(ICSError):
    """A design matrix is singular or too ill-conditioned to solve."""


class DegenerateScaleError(ICSError):
    """The residual scale collapsed to zero (exact fit)."""


class ConvergenceError(ICSError):
    """Iteration limit reached; ``last`` holds the final iterate."""

    def __init__(self, message: str, last: Any = None) -> None:
        super().__init__(message)
        self.last = last
