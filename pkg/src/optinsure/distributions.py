"""Loss distributions and quadrature against dF.

Every loss family exposes the same small surface: ``cdf``, ``exp_moment``,
``quantile`` and ``integrate``.  Continuous families integrate with composite
Gauss-Legendre panels refined by bisection; empirical (atomic) families are
summed exactly so brute-force oracles can be compared bit-for-bit.

Integration regions follow the Lebesgue-Stieltjes convention ``(lower, upper]``
except that a region starting at 0 is closed, so atoms at zero are counted.
This makes the split ``[0, b] + (b, c] = [0, c]`` exact for every family.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import DivergentMoment, QuadratureBudgetExceeded

Integrand = Callable[[np.ndarray], np.ndarray]
TailBound = Callable[[float], float]

# Segment length (in units of the mean) for open-ended integration without a tail bound.
_SEGMENT_MEANS = 8.0
_MAX_SEGMENTS = 400
_MAX_TRUNCATION = 1e6
_MAX_ACTIVE_PANELS = 200_000


class Family(enum.Enum):
    EXPONENTIAL = "exponential"
    EMPIRICAL = "empirical"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for composite Gauss-Legendre integration.

    ``truncation_tail_mass`` bounds the neglected (weighted) tail beyond the
    truncation point; ``abs_tol`` is the target absolute error on the finite
    part.  ``panel_count`` panels are laid between consecutive mandatory
    breakpoints and each may be bisected up to ``refinement_limit`` times.
    """

    truncation_tail_mass: float = 1e-14
    panel_count: int = 8
    refinement_limit: int = 40
    order: int = 20
    abs_tol: float = 1e-13

    def __post_init__(self):
        if not 0.0 < self.truncation_tail_mass < 1.0:
            raise ValueError("truncation_tail_mass must lie in (0, 1)")
        if self.panel_count < 1 or self.refinement_limit < 1 or self.order < 2:
            raise ValueError("panel_count, refinement_limit must be >= 1 and order >= 2")
        if self.abs_tol <= 0.0:
            raise ValueError("abs_tol must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "QuadratureSpec":
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown quadrature keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "truncation_tail_mass": self.truncation_tail_mass,
            "panel_count": self.panel_count,
            "refinement_limit": self.refinement_limit,
            "order": self.order,
            "abs_tol": self.abs_tol,
        }


DEFAULT_QUADRATURE = QuadratureSpec()


@lru_cache(maxsize=16)
def _gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _vectorize(fn: Callable) -> Integrand:
    """Accept both ufunc-style and scalar callables."""

    def wrapped(x: np.ndarray) -> np.ndarray:
        try:
            # Scalar-only callables may silently coerce size-1 arrays; treat
            # that deprecation as a signal to fall back to the scalar loop.
            with warnings.catch_warnings():
                warnings.simplefilter("error", DeprecationWarning)
                out = np.asarray(fn(x), dtype=float)
            if out.shape == x.shape:
                return out
            if out.ndim == 0:
                return np.full(x.shape, float(out))
        except (TypeError, ValueError, DeprecationWarning):
            pass
        return np.array([float(fn(float(v))) for v in x.ravel()]).reshape(x.shape)

    return wrapped


def _gl_panels(f: Integrand, lo: np.ndarray, hi: np.ndarray, order: int) -> np.ndarray:
    t, w = _gauss_legendre(order)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * t[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        fx = f(x.ravel()).reshape(x.shape)
    return half * (fx @ w)


def adaptive_gauss_legendre(
    f: Integrand,
    a: float,
    b: float,
    breakpoints: Sequence[float] = (),
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
) -> Tuple[float, float]:
    """Integrate ``f`` over [a, b]; return (value, error estimate).

    Breakpoints strictly inside (a, b) become panel edges.  Panels are refined
    breadth-first so ``f`` is always called on large arrays.
    """
    if not b > a:
        return 0.0, 0.0
    edges = np.unique(np.asarray([a, b] + [p for p in breakpoints if a < p < b], dtype=float))
    fracs = np.linspace(0.0, 1.0, spec.panel_count + 1)
    lo = np.concatenate([e0 + (e1 - e0) * fracs[:-1] for e0, e1 in zip(edges[:-1], edges[1:])])
    hi = np.concatenate([e0 + (e1 - e0) * fracs[1:] for e0, e1 in zip(edges[:-1], edges[1:])])
    total = b - a
    coarse = _gl_panels(f, lo, hi, spec.order)
    accepted_lo, accepted_val, accepted_err = [], [], []
    for _ in range(spec.refinement_limit):
        mid = 0.5 * (lo + hi)
        both = _gl_panels(f, np.concatenate([lo, mid]), np.concatenate([mid, hi]), spec.order)
        left, right = both[: lo.size], both[lo.size:]
        fine = left + right
        if not np.all(np.isfinite(fine)):
            raise DivergentMoment("integrand is not finite on the integration range")
        err = np.abs(fine - coarse)
        tol = np.maximum(spec.abs_tol * (hi - lo) / total, 64.0 * np.finfo(float).eps * np.abs(fine))
        ok = err <= tol
        accepted_lo.append(lo[ok])
        accepted_val.append(fine[ok])
        accepted_err.append(err[ok])
        if ok.all():
            break
        bad = ~ok
        if 2 * int(bad.sum()) > _MAX_ACTIVE_PANELS:
            raise QuadratureBudgetExceeded(f"more than {_MAX_ACTIVE_PANELS} panels on [{a:g}, {b:g}]")
        lo, hi = np.concatenate([lo[bad], mid[bad]]), np.concatenate([mid[bad], hi[bad]])
        coarse = np.concatenate([left[bad], right[bad]])
    else:
        raise QuadratureBudgetExceeded(
            f"{lo.size} panels on [{a:g}, {b:g}] unresolved after {spec.refinement_limit} refinements"
        )
    los = np.concatenate(accepted_lo)
    order = np.argsort(los, kind="stable")
    vals = np.concatenate(accepted_val)[order]
    return math.fsum(vals.tolist()), float(np.sum(np.concatenate(accepted_err)))


class LossDistribution:
    """Nonnegative loss X.  Subclasses are immutable."""

    kind: Family
    support_upper: float

    # Supremum of gamma with E[exp(gamma X)] finite.
    @property
    def exp_abscissa(self) -> float:
        return math.inf

    def cdf(self, x):
        raise NotImplementedError

    def quantile(self, q: float) -> float:
        raise NotImplementedError

    def exp_moment(self, gamma: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        raise NotImplementedError

    def integrate(self, integrand, lower=0.0, upper=math.inf, spec=DEFAULT_QUADRATURE,
                  breakpoints=(), tail_bound=None, full_output=False):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def is_discrete(self) -> bool:
        return self.kind is Family.EMPIRICAL


class _Continuous(LossDistribution):
    """Shared quadrature path for families with a density."""

    def pdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _open_tail(self, weighted: Integrand, lower: float, spec: QuadratureSpec,
                   breakpoints: Sequence[float]) -> Tuple[float, float]:
        raise DivergentMoment("open-ended integration requires a tail model")

    def _truncation_point(self, lower: float, tail_bound: TailBound, spec: QuadratureSpec) -> float:
        target = spec.truncation_tail_mass
        lo, step = lower, 1.0
        hi = lower + step
        while tail_bound(hi) >= target:
            lo = hi
            step *= 2.0
            hi = lower + step
            if hi > _MAX_TRUNCATION:
                raise DivergentMoment("tail bound never falls below truncation_tail_mass")
        for _ in range(60):
            if hi - lo <= 1e-3 * max(1.0, hi):
                break
            mid = 0.5 * (lo + hi)
            if tail_bound(mid) < target:
                hi = mid
            else:
                lo = mid
        return hi

    def integrate(self, integrand, lower=0.0, upper=math.inf, spec=DEFAULT_QUADRATURE,
                  breakpoints=(), tail_bound=None, full_output=False):
        if lower < 0.0:
            raise ValueError("lower must be nonnegative")
        if upper < lower:
            raise ValueError("lower must not exceed upper")
        f = _vectorize(integrand)

        def weighted(x):
            return f(x) * self.pdf(x)

        hi = min(upper, self.support_upper)
        if math.isfinite(hi):
            value, err = adaptive_gauss_legendre(weighted, lower, hi, breakpoints, spec)
        elif tail_bound is not None:
            x_max = self._truncation_point(lower, tail_bound, spec)
            value, err = adaptive_gauss_legendre(weighted, lower, x_max, breakpoints, spec)
            err += tail_bound(x_max)
        else:
            value, err = self._open_tail(weighted, lower, spec, breakpoints)
        return (value, err) if full_output else value


@dataclass(frozen=True)
class Exponential(_Continuous):
    """Exponential loss with rate ``rate`` (mean 1/rate)."""

    rate: float
    kind: Family = field(default=Family.EXPONENTIAL, init=False)
    support_upper: float = field(default=math.inf, init=False)

    def __post_init__(self):
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise ValueError("rate must be positive and finite")

    @property
    def exp_abscissa(self) -> float:
        return self.rate

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        out = -np.expm1(-self.rate * x)
        return float(out) if out.ndim == 0 else out

    def survival(self, x):
        out = np.exp(-self.rate * np.maximum(np.asarray(x, dtype=float), 0.0))
        return float(out) if out.ndim == 0 else out

    def pdf(self, x):
        return self.rate * np.exp(-self.rate * x)

    def quantile(self, q: float) -> float:
        if not 0.0 <= q < 1.0:
            raise ValueError("q must lie in [0, 1)")
        return -math.log1p(-q) / self.rate

    def exp_moment(self, gamma: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        if gamma >= self.rate:
            raise DivergentMoment(
                f"E[exp({gamma:g} X)] is infinite for Exponential(rate={self.rate:g})"
            )
        return self.rate / (self.rate - gamma)

    def _open_tail(self, weighted, lower, spec, breakpoints):
        # Integrate successive segments until contributions decay geometrically.
        seg = _SEGMENT_MEANS / self.rate
        parts, err, prev = [], 0.0, math.inf
        a = lower
        for _ in range(_MAX_SEGMENTS):
            v, e = adaptive_gauss_legendre(weighted, a, a + seg, breakpoints, spec)
            parts.append(v)
            err += e
            a += seg
            mag = abs(v)
            if mag < spec.truncation_tail_mass and mag <= 0.5 * prev:
                return math.fsum(parts), err + mag
            prev = mag
        raise DivergentMoment("integral does not converge on [lower, inf)")

    def to_dict(self) -> dict:
        return {"family": "exponential", "lambda": self.rate}


@dataclass(frozen=True)
class PiecewiseEmpirical(LossDistribution):
    """Finitely many atoms ``(x_i, p_i)``; every integral is an exact sum."""

    atoms: Tuple[Tuple[float, float], ...]
    kind: Family = field(default=Family.EMPIRICAL, init=False)

    def __post_init__(self):
        atoms = tuple((float(x), float(p)) for x, p in self.atoms)
        if not atoms:
            raise ValueError("at least one atom required")
        xs = [x for x, _ in atoms]
        ps = [p for _, p in atoms]
        if any(x < 0.0 for x in xs):
            raise ValueError("atoms must be nonnegative")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("atom locations must be strictly increasing")
        if any(p <= 0.0 for p in ps):
            raise ValueError("atom probabilities must be positive")
        if abs(math.fsum(ps) - 1.0) > 1e-12:
            raise ValueError("atom probabilities must sum to 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def support_upper(self) -> float:
        return self.atoms[-1][0]

    @property
    def xs(self) -> np.ndarray:
        return np.array([x for x, _ in self.atoms])

    @property
    def ps(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.array([math.fsum(p for xi, p in self.atoms if xi <= v) for v in x.ravel()])
        out = np.minimum(out.reshape(x.shape), 1.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, q: float) -> float:
        acc = 0.0
        for x, p in self.atoms:
            acc += p
            if acc >= q - 1e-15:
                return x
        return self.atoms[-1][0]

    def exp_moment(self, gamma: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        return math.fsum(p * math.exp(gamma * x) for x, p in self.atoms)

    def integrate(self, integrand, lower=0.0, upper=math.inf, spec=DEFAULT_QUADRATURE,
                  breakpoints=(), tail_bound=None, full_output=False):
        if lower < 0.0:
            raise ValueError("lower must be nonnegative")
        if upper < lower:
            raise ValueError("lower must not exceed upper")
        xs, ps = self.xs, self.ps
        mask = (xs <= upper) & ((xs > lower) | (lower == 0.0))
        if not mask.any():
            return (0.0, 0.0) if full_output else 0.0
        vals = _vectorize(integrand)(xs[mask])
        value = math.fsum((ps[mask] * vals).tolist())
        return (value, 0.0) if full_output else value

    def to_dict(self) -> dict:
        return {"family": "empirical", "atoms": [[x, p] for x, p in self.atoms]}


@dataclass(frozen=True)
class TruncatedContinuous(_Continuous):
    """Continuous loss on [0, support_upper] given by cdf and density callables."""

    cdf_fn: Callable[[float], float]
    pdf_fn: Callable
    support_upper: float
    kind: Family = field(default=Family.TRUNCATED, init=False)

    def __post_init__(self):
        if not (self.support_upper > 0.0 and math.isfinite(self.support_upper)):
            raise ValueError("support_upper must be positive and finite")
        if abs(float(self.cdf_fn(0.0))) > 1e-12 and float(self.cdf_fn(0.0)) < 0.0:
            raise ValueError("cdf(0) must be nonnegative")
        if abs(float(self.cdf_fn(self.support_upper)) - 1.0) > 1e-12:
            raise ValueError("cdf(support_upper) must equal 1")
        grid = np.linspace(0.0, self.support_upper, 257)
        vals = np.array([float(self.cdf_fn(v)) for v in grid])
        if np.any(np.diff(vals) < -1e-15):
            raise ValueError("cdf must be nondecreasing")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.array([float(self.cdf_fn(min(max(v, 0.0), self.support_upper))) for v in x.ravel()])
        out = out.reshape(x.shape)
        return float(out) if out.ndim == 0 else out

    def pdf(self, x):
        return _vectorize(self.pdf_fn)(x)

    def quantile(self, q: float) -> float:
        lo, hi = 0.0, self.support_upper
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(self.cdf_fn(mid)) >= q:
                hi = mid
            else:
                lo = mid
        return hi

    def exp_moment(self, gamma: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        return self.integrate(lambda x: np.exp(gamma * x), 0.0, self.support_upper, spec)

    def to_dict(self) -> dict:
        raise TypeError("TruncatedContinuous wraps callables and has no JSON form")


def cdf(dist: LossDistribution, x):
    if np.any(np.asarray(x) < 0.0):
        raise ValueError("x must be nonnegative")
    return dist.cdf(x)


def exp_moment(dist: LossDistribution, gamma: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """E[exp(gamma X)]: the upper end of the admissible interval for M."""
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    return dist.exp_moment(gamma, spec)


def integrate_dF(
    dist: LossDistribution,
    integrand: Callable,
    lower: float = 0.0,
    upper: float = math.inf,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    breakpoints: Sequence[float] = (),
    tail_bound: Optional[TailBound] = None,
    full_output: bool = False,
):
    """Integrate ``integrand`` against dF over ``(lower, upper]``.

    ``tail_bound(a)`` must bound ``|∫_a^∞ integrand dF|``; when given, the
    domain is truncated where the bound drops below
    ``spec.truncation_tail_mass``.  With ``full_output`` the pair
    ``(value, error_bound)`` is returned.
    """
    return dist.integrate(integrand, lower, upper, spec, tuple(breakpoints), tail_bound, full_output)


def from_dict(data: dict) -> LossDistribution:
    """Build a distribution from its JSON config form."""
    if not isinstance(data, dict):
        raise ValueError("distribution must be an object")
    family = data.get("family")
    if family == "exponential":
        unknown = set(data) - {"family", "lambda"}
        if unknown:
            raise ValueError(f"unknown distribution keys: {sorted(unknown)}")
        if "lambda" not in data:
            raise ValueError("exponential distribution needs 'lambda'")
        return Exponential(float(data["lambda"]))
    if family == "empirical":
        unknown = set(data) - {"family", "atoms"}
        if unknown:
            raise ValueError(f"unknown distribution keys: {sorted(unknown)}")
        return PiecewiseEmpirical(tuple((a[0], a[1]) for a in data["atoms"]))
    raise ValueError(f"unknown distribution family {family!r}")
