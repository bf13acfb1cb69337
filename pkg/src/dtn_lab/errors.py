"""Exception types shared across the package."""


class DtnLabError(Exception):
    """Base class for all package errors."""


class GridError(DtnLabError, ValueError):
    """Invalid grid parameters or carrier mismatch."""


class ClassViolation(DtnLabError):
    """A nonlinearity fails its admissibility conditions, or c >= lambda_1."""


class NonConvergence(DtnLabError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class QNotAdmissible(DtnLabError):
    """A potential drops below the admissible floor -c."""


class ResolutionError(DtnLabError):
    """Grid spacing too coarse for the requested CGO semiclassical parameter."""


class InsufficientData(DtnLabError):
    """Not enough points to fit a model."""
