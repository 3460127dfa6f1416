"""Exception hierarchy shared by the workbench modules.

Two families matter to callers: :class:`ValidationError` for inputs and
configuration that can be fixed by the user, and :class:`NumericalError` for
failures of the numerics themselves. The CLI maps them to exit codes 1 and 2.
"""
from __future__ import annotations


class WorkbenchError(Exception):
    """Root of every error raised by the workbench."""


class ValidationError(WorkbenchError, ValueError):
    """Invalid configuration, arguments or preconditions."""


class DegenerateDesignError(ValidationError):
    """Identification data cannot determine the requested parameters."""


class InfeasibleBoundsError(ValidationError):
    """Search bounds produce non-physical parameters."""


class PolicyFormatError(ValidationError):
    """A policy file does not match the expected header or shapes."""


class NumericalError(WorkbenchError, ArithmeticError):
    """Non-finite values, loss of definiteness or similar numerical failure."""


class DomainError(NumericalError):
    """An input lies outside the domain of the evaluated function."""


class SingularityError(NumericalError):
    """A model equation divides by a quantity that vanished."""


class SolverError(NumericalError):
    """An iterative solver did not converge to an admissible solution."""


__all__ = [
    "DegenerateDesignError",
    "DomainError",
    "InfeasibleBoundsError",
    "NumericalError",
    "PolicyFormatError",
    "SingularityError",
    "SolverError",
    "ValidationError",
    "WorkbenchError",
]
