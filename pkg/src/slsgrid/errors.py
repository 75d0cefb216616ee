"""Exception hierarchy shared by every module."""


class SlsError(Exception):
    """Base class for all library errors."""


class DimensionError(SlsError, ValueError):
    """Array shapes do not agree."""


class InfeasibleError(SlsError):
    """A constraint set is empty.

    ``where`` names the offending constraint (row label, column, node).
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class DegenerateProblemError(SlsError):
    """Objective is not strictly convex on the feasible subspace."""


class NonConvergenceError(SlsError):
    """Iteration cap reached before tolerances were met."""

    def __init__(self, message, residuals=None, history=None):
        super().__init__(message)
        self.residuals = residuals
        self.history = history if history is not None else []


class NumericalError(SlsError):
    """Floating point failure inside a linear algebra routine."""


class LocalityError(SlsError):
    """A computation read data from outside its allowed neighborhood."""
