"""Exception hierarchy shared by every module of the package."""


class OptInsureError(Exception):
    """Base class for all package errors."""


class DivergentMoment(OptInsureError):
    """An exponential (or derivative) moment of the loss is infinite."""


class QuadratureBudgetExceeded(OptInsureError):
    """Adaptive quadrature hit its refinement limit before meeting tolerance."""


class DegeneratePremium(OptInsureError):
    """m * g'(0+) <= 1, so the deductible is not strictly positive."""


class BracketFailure(OptInsureError):
    """kappa does not change sign on (0, x)."""


class NoConvergence(OptInsureError):
    """The fixed-point iteration exhausted max_iterations."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InadmissibleIndemnity(OptInsureError):
    """An indemnity violates 0 <= I(x) <= x on the evaluation grid."""


class InvalidPremium(OptInsureError):
    """A premium function fails membership in the convex premium set."""


class NoRoot(OptInsureError):
    """A closed-form oracle equation has no root in its search bracket."""


class BudgetExceeded(OptInsureError):
    """Brute-force search space exceeds the configured cap."""
