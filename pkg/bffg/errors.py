"""Exception hierarchy shared by the filter, the guided samplers and the CLI.

Validation problems subclass ``ValueError`` and map to exit code 2; numerical
failures subclass ``ArithmeticError`` and map to exit code 3.
"""
from typing import Any, Optional


class BFFGError(Exception):
    """Base class for every error raised by this package."""


class ModelValidationError(BFFGError, ValueError):
    """The model, its parameters or its input file are not acceptable."""


class StructuralError(ModelValidationError):
    """Graph structure problem: cycle, unknown vertex, missing observation."""


class FamilyMismatchError(ModelValidationError):
    """Potentials or kernels from incompatible families were combined."""


class NumericalError(BFFGError, ArithmeticError):
    """A numerical step failed (singular matrix, blow-up, non-finite value)."""

    def __init__(self, message: str, edge: Optional[Any] = None, diagnostics: Optional[dict] = None):
        if edge is not None:
            message = f"edge {edge}: {message}"
        super().__init__(message)
        self.edge = edge
        self.diagnostics = dict(diagnostics or {})


class SamplingError(NumericalError):
    """A guided sampler could not produce a draw."""

    def __init__(self, message: str, state: Any = None, edge: Optional[Any] = None, diagnostics: Optional[dict] = None):
        super().__init__(message, edge=edge, diagnostics=diagnostics)
        self.state = state


class DomainError(SamplingError):
    """The current state lies outside the support required by the kernel."""
