#!/usr/bin/env python3
"""
Toolkit Errors
Exception hierarchy shared by every module of the invariant-manifold toolkit.
"""

from typing import List, Optional, Sequence


class ToolkitError(Exception):
    """Base class for all toolkit failures"""


class ShapeError(ToolkitError):
    """Array or grid metadata does not conform"""


class ParameterError(ToolkitError):
    """A parameter lies outside its admissible range"""


class DomainError(ToolkitError):
    """Input data outside the domain of an operation (empty samples, non-finite values)"""


class ConvergenceError(ToolkitError):
    """An iterative solver failed; carries the residual history"""

    def __init__(self, message: str, residuals: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residuals: List[float] = list(residuals or [])


class DegenerateSplittingError(ToolkitError):
    """Spectral classification is ambiguous at the requested tolerance"""

    def __init__(self, message: str, suggested_tol: Optional[float] = None):
        super().__init__(message)
        self.suggested_tol = suggested_tol


class OutOfChartError(ToolkitError):
    """A state lies outside the validity ball of the bundle chart"""


class StepSizeError(ToolkitError):
    """Time step outside the stability region of the selected scheme"""


class DivergenceError(ToolkitError):
    """Integration blew up; carries the partial trajectory"""

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class ParameterRegimeError(ToolkitError):
    """Fixed-point iteration is not contracting for the chosen cut-off parameters"""

    def __init__(self, message: str, ratios: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.ratios: List[float] = list(ratios or [])


class PreconditionError(ToolkitError):
    """Inputs violate the precondition of an experiment"""
