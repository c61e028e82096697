"""Exception types shared across the package."""

from __future__ import annotations


class GsreError(Exception):
    """Base class for errors raised by this package."""


class MaxIterationsExceeded(GsreError):
    """An iterative routine ran out of iterations before reaching its tolerance.

    Attributes
    ----------
    last_iterate : ndarray or object
        State of the iterate when the budget was exhausted.
    residual : float
        Convergence measure achieved at the last iteration.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class HypothesisViolated(GsreError):
    """A formula was evaluated outside the regime where its guarantee holds.

    The computed value, when it is still well defined, is attached as
    ``value`` so callers may use it at their own risk.
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class ResidualZero(GsreError):
    """The residual vanished, so a residual-normalized quantity is undefined."""


class NumericalBreakdown(GsreError):
    """Non-finite values appeared in an iterate; the run was aborted."""


class NotPSD(GsreError):
    """A matrix required to be positive semidefinite is not."""
