"""
Module for the package exception hierarchy. The command line maps these onto exit codes.
"""


class DcaError(Exception):
    """Base class for errors raised by dcasim."""


class ConfigError(DcaError, ValueError):
    """Raised when a run config is missing keys or holds out-of-range values."""


class MeshError(DcaError, ValueError):
    """Raised on mesh parse failures, bad connectivity or degenerate elements."""


class BoundaryConditionError(DcaError, ValueError):
    """Raised when constraints reference unknown node sets or contradict each other."""


class ConvergenceError(DcaError, RuntimeError):
    """Raised when an iterative procedure fails to converge.

    Attributes:
        diagnostics (dict): iteration counts, residual norms and other context of the failure.
    """
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DeflationError(ConvergenceError):
    """Raised when the deflation coarse matrix cannot be factorized."""


class ReducedModelError(ConvergenceError):
    """Raised when the cluster-based reduced model is degenerate or rank deficient."""
