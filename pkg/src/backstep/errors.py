"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's preconditions."""


class NumericFailure(RuntimeError):
    """Raised when an iterative or linear solve does not succeed.

    The last measured residual is kept on ``residual`` so callers can report it.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual
