"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3.
"""

from __future__ import annotations


class CalderonLabError(Exception):
    """Base class for every error raised by the package."""

    def diagnostic(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(CalderonLabError, ValueError):
    """Invalid parameter or configuration value."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key

    def diagnostic(self) -> dict:
        out = super().diagnostic()
        if self.key is not None:
            out["key"] = self.key
        return out


class GeometryError(ConfigError):
    """Domain description violates a geometric requirement."""


class PreconditionError(ConfigError):
    """An operation was called outside its admissible input range."""


class DependencyError(CalderonLabError, KeyError):
    """A lower-order quantity needed by a recursion step is missing."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key

    def diagnostic(self) -> dict:
        out = super().diagnostic()
        if self.key is not None:
            out["key"] = self.key
        return out

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class SolverError(CalderonLabError, RuntimeError):
    """A linear or nonlinear solve failed."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual

    def diagnostic(self) -> dict:
        out = super().diagnostic()
        if self.residual is not None:
            out["residual"] = self.residual
        return out


class ConvergenceError(SolverError):
    """An iteration did not reach its tolerance."""
