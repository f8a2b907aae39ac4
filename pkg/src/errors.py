"""
Errors Module

Exception hierarchy shared by the workbench modules.
"""

from typing import List, Optional


class WorkbenchError(Exception):
    """Base class for all workbench errors."""
    pass


class ConfigurationError(WorkbenchError):
    """Raised when a grid, model or run configuration is invalid."""
    pass


class DomainError(WorkbenchError):
    """Raised when an input lies outside the domain of an operation."""
    pass


class UsageError(WorkbenchError):
    """Raised when a state does not match the model it is evaluated with."""
    pass


class NumericalError(WorkbenchError):
    """
    Raised when a numerical procedure fails (non-convergence, NaN, collapse).

    The optional trace carries whatever history the failing procedure kept,
    e.g. eigenvalue estimates or objective values.
    """

    def __init__(self, message: str, trace: Optional[List] = None):
        super().__init__(message)
        self.trace = list(trace) if trace else []
