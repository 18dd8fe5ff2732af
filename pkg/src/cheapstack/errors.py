"""Exception types raised by the package."""

from __future__ import annotations


class CheapStackError(Exception):
    """Base class for all package errors."""


class StructuralError(CheapStackError, ValueError):
    """Shapes or dimensions of the game data are inconsistent."""


class AssumptionError(CheapStackError):
    """A standing assumption on the game data fails at some time."""

    def __init__(self, name: str, t: float, value: float, message: str):
        self.name = name
        self.t = t
        self.value = value
        super().__init__(f"{name} fails at t={t:.6g}: {message} (value={value:.3e})")


class InvalidComplementError(CheapStackError):
    """The complement matrix does not complete B_v to an invertible matrix."""


class UnsolvableProblemError(CheapStackError):
    """A linear boundary-value problem is singular (no unique solution)."""


class ConvergenceError(CheapStackError):
    """A numerical routine did not reach the requested accuracy."""

    def __init__(self, message: str, achieved: float | None = None):
        self.achieved = achieved
        super().__init__(message)


class UnsupportedConfigurationError(CheapStackError):
    """The requested configuration is outside what the solver supports."""
