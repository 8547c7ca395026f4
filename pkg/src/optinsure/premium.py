"""Convex premium functions g and the premium functional pi(I) = E[g(I(X))]."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .distributions import (
    DEFAULT_QUADRATURE,
    Exponential,
    LossDistribution,
    QuadratureSpec,
    _vectorize,
    integrate_dF,
)

# Kernel family codes shared with the compiled and fallback root finders.
FAMILY_EXPECTED_VALUE = 0
FAMILY_QUADRATIC = 1
FAMILY_STOP_LOSS = 2
FAMILY_CUSTOM = 3


def _scalar_or_array(out: np.ndarray):
    return float(out) if out.ndim == 0 else out


class PremiumFunction:
    """Convex g with g(0)=0, g(x) >= x and one-sided derivatives >= 1."""

    family_code: int = FAMILY_CUSTOM
    kinks: Tuple[float, ...] = ()

    @property
    def extended(self) -> bool:
        """True for non-differentiable g, which lies outside the smooth premium set."""
        return bool(self.kinks)

    def value(self, y):
        raise NotImplementedError

    def deriv(self, y, side: str = "right"):
        raise NotImplementedError

    @property
    def deriv0(self) -> float:
        return float(self.deriv(0.0, "right"))

    def kernel_params(self) -> np.ndarray:
        """Flat parameter vector understood by the indemnity kernels."""
        return np.empty(0)

    def value_tail(self, dist: LossDistribution, a: float) -> Optional[float]:
        """Bound on E[g(X) 1{X > a}], or None when no closed form is available."""
        return None

    def deriv_tail(self, dist: LossDistribution, a: float) -> Optional[float]:
        """Bound on E[g'(X+) 1{X > a}], or None when no closed form is available."""
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError

    def validate(self, grid_max: float = 10.0, grid_points: int = 1000) -> "ValidationReport":
        return validate(self, grid_max, grid_points)


@dataclass(frozen=True)
class ExpectedValue(PremiumFunction):
    """g(x) = (1 + theta) x."""

    theta: float
    family_code: int = field(default=FAMILY_EXPECTED_VALUE, init=False, repr=False)

    def __post_init__(self):
        if not self.theta > 0.0:
            raise ValueError("theta must be positive")

    def value(self, y):
        return _scalar_or_array((1.0 + self.theta) * np.asarray(y, dtype=float))

    def deriv(self, y, side="right"):
        return _scalar_or_array(np.full(np.shape(y), 1.0 + self.theta))

    def kernel_params(self):
        return np.array([self.theta])

    def value_tail(self, dist, a):
        if isinstance(dist, Exponential):
            lam = dist.rate
            return (1.0 + self.theta) * math.exp(-lam * a) * (a + 1.0 / lam)
        return None

    def deriv_tail(self, dist, a):
        if isinstance(dist, Exponential):
            return (1.0 + self.theta) * math.exp(-dist.rate * a)
        return None

    def to_dict(self):
        return {"family": "expected_value", "theta": self.theta}


@dataclass(frozen=True)
class Quadratic(PremiumFunction):
    """g(x) = x + alpha x^2."""

    alpha: float
    family_code: int = field(default=FAMILY_QUADRATIC, init=False, repr=False)

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return _scalar_or_array(y + self.alpha * y * y)

    def deriv(self, y, side="right"):
        return _scalar_or_array(1.0 + 2.0 * self.alpha * np.asarray(y, dtype=float))

    def kernel_params(self):
        return np.array([self.alpha])

    def value_tail(self, dist, a):
        if isinstance(dist, Exponential):
            lam = dist.rate
            first = a + 1.0 / lam
            second = a * a + 2.0 * a / lam + 2.0 / lam**2
            return math.exp(-lam * a) * (first + self.alpha * second)
        return None

    def deriv_tail(self, dist, a):
        if isinstance(dist, Exponential):
            lam = dist.rate
            return math.exp(-lam * a) * (1.0 + 2.0 * self.alpha * (a + 1.0 / lam))
        return None

    def to_dict(self):
        return {"family": "quadratic", "alpha": self.alpha}


@dataclass(frozen=True)
class MultiLayerStopLoss(PremiumFunction):
    """g(x) = x + sum_i theta_i (x - delta_i)_+ with 0 < delta_1 < ... < delta_k."""

    loadings: Tuple[float, ...]
    thresholds: Tuple[float, ...]
    family_code: int = field(default=FAMILY_STOP_LOSS, init=False, repr=False)

    def __post_init__(self):
        loadings = tuple(float(t) for t in self.loadings)
        thresholds = tuple(float(d) for d in self.thresholds)
        if len(loadings) != len(thresholds) or not loadings:
            raise ValueError("loadings and thresholds must be non-empty and equally long")
        if any(t <= 0.0 for t in loadings):
            raise ValueError("loadings must be positive")
        if thresholds[0] <= 0.0 or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("thresholds must be positive and strictly increasing")
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def kinks(self):
        return self.thresholds

    @property
    def max_slope(self) -> float:
        return 1.0 + math.fsum(self.loadings)

    def value(self, y):
        y = np.asarray(y, dtype=float)
        out = y.copy()
        for t, d in zip(self.loadings, self.thresholds):
            out = out + t * np.maximum(y - d, 0.0)
        return _scalar_or_array(out)

    def deriv(self, y, side="right"):
        y = np.asarray(y, dtype=float)
        out = np.ones_like(y)
        for t, d in zip(self.loadings, self.thresholds):
            out = out + t * ((y >= d) if side == "right" else (y > d))
        return _scalar_or_array(out)

    def kernel_params(self):
        # [k, theta_1..theta_k, delta_1..delta_k]
        return np.array([len(self.loadings), *self.loadings, *self.thresholds], dtype=float)

    def value_tail(self, dist, a):
        if isinstance(dist, Exponential):
            lam = dist.rate
            return self.max_slope * math.exp(-lam * a) * (a + 1.0 / lam)
        return None

    def deriv_tail(self, dist, a):
        if isinstance(dist, Exponential):
            return self.max_slope * math.exp(-dist.rate * a)
        return None

    def to_dict(self):
        return {"family": "stop_loss", "loadings": list(self.loadings),
                "thresholds": list(self.thresholds)}


@dataclass(frozen=True)
class CustomConvex(PremiumFunction):
    """User-supplied g given by value and right-derivative callables.

    ``kinks`` lists the points where g' jumps; the left derivative there is
    taken as the right derivative at the next float below.
    """

    value_fn: Callable
    deriv_fn: Callable
    kinks: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kinks", tuple(sorted(float(k) for k in self.kinks)))

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return _scalar_or_array(_vectorize(self.value_fn)(np.atleast_1d(y)).reshape(y.shape))

    def deriv(self, y, side="right"):
        y = np.asarray(y, dtype=float)
        if side == "left":
            y = np.nextafter(y, -np.inf)
        return _scalar_or_array(_vectorize(self.deriv_fn)(np.atleast_1d(y)).reshape(y.shape))

    def to_dict(self):
        raise TypeError("CustomConvex wraps callables and has no JSON form")


@dataclass
class ValidationReport:
    """Pass/fail per membership condition, checked on a uniform grid."""

    checks: Dict[str, bool]
    details: Dict[str, str]
    grid_max: float
    grid_points: int
    extended_family: bool

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def failures(self):
        return [name for name, passed in self.checks.items() if not passed]


def validate(g: PremiumFunction, grid_max: float = 10.0, grid_points: int = 1000) -> ValidationReport:
    """Grid check of g(0)=0, g >= x, convexity, g' >= 1 and g not identically x."""
    if grid_points < 3:
        raise ValueError("grid_points must be at least 3")
    x = np.linspace(0.0, grid_max, grid_points)
    gx = np.asarray(g.value(x), dtype=float)
    dx = np.asarray(g.deriv(x, "right"), dtype=float)
    scale = np.maximum(1.0, np.abs(gx))
    checks, details = {}, {}

    g0 = float(g.value(0.0))
    checks["g(0)=0"] = abs(g0) <= 1e-12
    details["g(0)=0"] = f"g(0) = {g0:.3e}"

    gap = gx - x
    checks["g(x)>=x"] = bool(np.all(gap >= -1e-12 * scale))
    details["g(x)>=x"] = f"min g(x)-x = {gap.min():.3e}"

    second = gx[2:] - 2.0 * gx[1:-1] + gx[:-2]
    mono = np.diff(dx)
    convex = bool(np.all(second >= -1e-10 * scale[1:-1]) and np.all(mono >= -1e-12))
    checks["convex"] = convex
    details["convex"] = f"min second difference = {second.min():.3e}, min g' increment = {mono.min():.3e}"

    checks["g'>=1"] = bool(np.all(dx >= 1.0 - 1e-12))
    details["g'>=1"] = f"min g'(x+) = {dx.min():.6g}"

    checks["g!=x"] = bool(np.any(gap > 1e-12 * scale))
    details["g!=x"] = f"max g(x)-x = {gap.max():.3e}"
    return ValidationReport(checks, details, grid_max, grid_points, g.extended)


def g_value(g: PremiumFunction, y):
    if np.any(np.asarray(y) < 0.0):
        raise ValueError("y must be nonnegative")
    return g.value(y)


def g_deriv(g: PremiumFunction, y, side: str = "right"):
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if side == "left" and np.any(np.asarray(y) <= 0.0):
        raise ValueError("left derivative requires y > 0")
    return g.deriv(y, side)


def premium(
    g: PremiumFunction,
    indemnity: Callable,
    dist: LossDistribution,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    breakpoints=None,
) -> float:
    """pi(I) = E[g(I(X))].

    ``indemnity`` may be an IndemnitySchedule (its kinks are used as panel
    edges) or any vectorised callable; extra ``breakpoints`` mark its kinks.
    """
    ind = _vectorize(indemnity)
    bps = tuple(breakpoints) if breakpoints is not None else tuple(getattr(indemnity, "breakpoints", ()))

    def integrand(x):
        return g.value(ind(x))

    tail = None
    if g.value_tail(dist, 0.0) is not None:
        def tail(a):
            return g.value_tail(dist, a)

    return integrate_dF(dist, integrand, 0.0, math.inf, spec, bps, tail)


def from_dict(data: dict) -> PremiumFunction:
    """Build a premium function from its JSON config form."""
    if not isinstance(data, dict):
        raise ValueError("premium must be an object")
    family = data.get("family")
    allowed = {
        "expected_value": {"family", "theta"},
        "quadratic": {"family", "alpha"},
        "stop_loss": {"family", "loadings", "thresholds"},
    }
    if family not in allowed:
        raise ValueError(f"unknown premium family {family!r}")
    unknown = set(data) - allowed[family]
    missing = allowed[family] - set(data)
    if unknown:
        raise ValueError(f"unknown premium keys: {sorted(unknown)}")
    if missing:
        raise ValueError(f"missing premium keys: {sorted(missing)}")
    if family == "expected_value":
        return ExpectedValue(float(data["theta"]))
    if family == "quadratic":
        return Quadratic(float(data["alpha"]))
    return MultiLayerStopLoss(tuple(data["loadings"]), tuple(data["thresholds"]))
