"""Optimal insurance indemnities under exponential utility.

The buyer minimises E[exp(gamma (X - I(X) + pi(I)))] over indemnities
0 <= I(x) <= x, where the premium is pi(I) = E[g(I(X))] for a convex g.
The optimum is pinned down by a single scalar M, found here by a monotone
fixed-point iteration; closed-form and brute-force oracles check the result.
"""
__version__ = "0.1.0"

from .distributions import Exponential, PiecewiseEmpirical, QuadratureSpec, TruncatedContinuous
from .errors import (
    BudgetExceeded,
    DegeneratePremium,
    DivergentMoment,
    NoConvergence,
    NoRoot,
    OptInsureError,
    QuadratureBudgetExceeded,
)
from .kernels import BACKEND
from .premium import CustomConvex, ExpectedValue, MultiLayerStopLoss, Quadratic
from .solver import (
    IndemnitySchedule,
    M0Strategy,
    SolverConfig,
    SolverTrace,
    check_comonotone,
    deductible_from_m,
    fixed_point_solve,
    h_map,
    objective,
)

__all__ = [
    "BACKEND",
    "BudgetExceeded",
    "CustomConvex",
    "DegeneratePremium",
    "DivergentMoment",
    "ExpectedValue",
    "Exponential",
    "IndemnitySchedule",
    "M0Strategy",
    "MultiLayerStopLoss",
    "NoConvergence",
    "NoRoot",
    "OptInsureError",
    "PiecewiseEmpirical",
    "Quadratic",
    "QuadratureBudgetExceeded",
    "QuadratureSpec",
    "SolverConfig",
    "SolverTrace",
    "TruncatedContinuous",
    "check_comonotone",
    "deductible_from_m",
    "fixed_point_solve",
    "h_map",
    "objective",
]
