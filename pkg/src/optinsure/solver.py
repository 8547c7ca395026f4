"""Optimal indemnity under exponential utility and a convex premium.

Given the scalar M = E[exp(gamma (X - I(X)))], the optimal contract is fully
determined: no payment up to the deductible d = log(M g'(0+)) / gamma, and
above it the payment y solving exp(gamma (x - y)) = M g'(y).  M itself is the
fixed point of the map h, found by monotone iteration M_n = h(M_{n-1}).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .distributions import (
    DEFAULT_QUADRATURE,
    Exponential,
    LossDistribution,
    QuadratureSpec,
    _vectorize,
    exp_moment,
    integrate_dF,
)
from .errors import (
    DegeneratePremium,
    DivergentMoment,
    InadmissibleIndemnity,
    InvalidPremium,
    NoConvergence,
)
from .premium import CustomConvex, PremiumFunction, premium, validate


STOPPING_RULES = ("step", "extrapolated")
# Cap on the observed contraction ratio, so noise-level steps still stop.
_MAX_RATIO = 0.99


class M0Strategy(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"
    CUSTOM = "custom"


@dataclass(frozen=True)
class SolverConfig:
    gamma: float
    m_tolerance: float = 1e-8
    max_iterations: int = 500
    root_tolerance: float = 1e-12
    m0_strategy: M0Strategy = M0Strategy.LOWER
    m0_value: Optional[float] = None
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE
    # "step": stop once |M_n - M_{n-1}| <= m_tolerance.  "extrapolated" also
    # requires the geometric estimate of the remaining distance to M* to be
    # within m_tolerance, which matters when h contracts slowly.
    stopping: str = "extrapolated"

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")
        if not (self.m_tolerance > 0.0 and self.root_tolerance > 0.0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.stopping not in STOPPING_RULES:
            raise ValueError(f"stopping must be one of {STOPPING_RULES}")
        strategy = M0Strategy(self.m0_strategy)
        object.__setattr__(self, "m0_strategy", strategy)
        if strategy is M0Strategy.CUSTOM:
            if self.m0_value is None or not self.m0_value >= 1.0:
                raise ValueError("custom M0 must be >= 1")

    def with_m0(self, m0: Union[str, float]) -> "SolverConfig":
        if isinstance(m0, str) and m0 in ("lower", "upper"):
            return _replace(self, m0_strategy=M0Strategy(m0), m0_value=None)
        return _replace(self, m0_strategy=M0Strategy.CUSTOM, m0_value=float(m0))


def _replace(cfg, **changes):
    from dataclasses import replace

    return replace(cfg, **changes)


@dataclass(frozen=True)
class IndemnitySchedule:
    """The contract induced by a value of M; callable on losses."""

    m_star: float
    deductible: float
    gamma: float
    premium_fn: PremiumFunction
    root_tolerance: float = 1e-12
    cache: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_m(cls, m: float, gamma: float, g: PremiumFunction, root_tolerance: float = 1e-12,
               strict: bool = False) -> "IndemnitySchedule":
        d = deductible_from_m(m, gamma, g, strict=strict)
        return cls(m, d, gamma, g, root_tolerance)

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        out = kernels.solve_indemnity(arr, self.m_star, self.gamma, self.premium_fn, self.root_tolerance)
        out = out.reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    @property
    def plateau_levels(self) -> Tuple[float, ...]:
        return tuple(self.premium_fn.kinks)

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        """Deductible plus every loss where a flat layer starts or ends."""
        pts = [self.deductible]
        g = self.premium_fn
        for k in g.kinks:
            for side in ("left", "right"):
                x = k + math.log(self.m_star * float(g.deriv(k, side))) / self.gamma
                if x > self.deductible:
                    pts.append(x)
        return tuple(sorted(set(pts)))

    def grid(self, x_max: float, points: int = 501) -> np.ndarray:
        """Uniform-plus-geometric grid on [0, x_max] that contains every breakpoint."""
        if points < 2:
            raise ValueError("points must be >= 2")
        half = max(points // 2, 2)
        uniform = np.linspace(0.0, x_max, half)
        d = self.deductible
        if x_max > d:
            span = x_max - d
            geometric = d + np.geomspace(span * 1e-6, span, points - half)
        else:
            geometric = np.empty(0)
        extra = [b for b in self.breakpoints if 0.0 <= b <= x_max]
        return np.unique(np.concatenate([uniform, geometric, extra]))

    def with_cache(self, x_max: float, points: int = 501) -> "IndemnitySchedule":
        x = self.grid(x_max, points)
        return _replace(self, cache=(x, np.asarray(self(x))))


@dataclass(frozen=True)
class IterationRecord:
    n: int
    m: float
    d: float
    residual: float


@dataclass
class SolverTrace:
    m0: float
    iterations: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    direction: str = "stationary"
    fixed_point_residual: float = math.nan
    quadrature_error: float = 0.0
    derivative_moment: Optional[float] = None
    distance_estimate: float = math.nan

    @property
    def ms(self) -> List[float]:
        return [self.m0] + [r.m for r in self.iterations]

    def to_dict(self) -> dict:
        return {
            "m0": self.m0,
            "converged": self.converged,
            "direction": self.direction,
            "fixed_point_residual": self.fixed_point_residual,
            "quadrature_error": self.quadrature_error,
            "derivative_moment": self.derivative_moment,
            "distance_estimate": self.distance_estimate,
            "iterations": [
                {"n": r.n, "m": r.m, "d": r.d, "residual": r.residual} for r in self.iterations
            ],
        }


@dataclass(frozen=True)
class ObjectiveReport:
    premium_value: float
    objective_value: float
    certainty_equivalent: float
    retained_moment: float

    def to_dict(self) -> dict:
        return {
            "premium": self.premium_value,
            "objective": self.objective_value,
            "certainty_equivalent": self.certainty_equivalent,
            "retained_moment": self.retained_moment,
        }


def deductible_from_m(m: float, gamma: float, g: PremiumFunction, strict: bool = True) -> float:
    """d = log(m g'(0+)) / gamma.

    With ``strict=False`` the boundary case m g'(0+) == 1 (only possible for
    m = 1 and g'(0+) = 1, the usual starting point of the iteration) returns
    0 instead of raising.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    prod = m * g.deriv0
    if prod < 1.0 or (strict and prod == 1.0):
        raise DegeneratePremium(f"m * g'(0+) = {prod:.17g} <= 1; deductible not positive")
    return math.log(prod) / gamma


def kappa(x: float, y: float, m: float, gamma: float, g: PremiumFunction, side: str = "right") -> float:
    """exp(gamma (x - y)) - m g'(y); y = 0 and y = x give the one-sided limits."""
    if not 0.0 <= y <= x:
        raise ValueError("need 0 <= y <= x")
    return math.exp(gamma * (x - y)) - m * float(g.deriv(y, side))


def indemnity_at(x, m: float, cfg: SolverConfig, g: PremiumFunction):
    """Optimal payment at loss(es) ``x`` for a given M (Step 3 of the iteration)."""
    if m < 1.0:
        raise ValueError("m must be >= 1")
    if np.any(np.asarray(x) < 0.0):
        raise ValueError("x must be nonnegative")
    return IndemnitySchedule.from_m(m, cfg.gamma, g, cfg.root_tolerance)(x)


def _retained_tail(dist: LossDistribution, g: PremiumFunction, m: float, gamma: float):
    """Tail bound for exp(gamma (x - I_m(x))) dF, or None.

    Above the deductible exp(gamma (x - I)) = m g'(I) <= m g'(x); below it the
    weight is exp(gamma x) <= m g'(0).  Where E[exp(gamma X)] is finite the
    cruder exp(gamma x) bound is also available; the smaller one is used.
    """
    bounds = []
    if g.deriv_tail(dist, 0.0) is not None:
        bounds.append(lambda a: m * g.deriv_tail(dist, a))
    if isinstance(dist, Exponential) and gamma < dist.rate:
        lam = dist.rate
        bounds.append(lambda a: lam / (lam - gamma) * math.exp(-(lam - gamma) * a))
    if not bounds:
        return None
    return lambda a: min(b(a) for b in bounds)


def _h(m: float, dist: LossDistribution, g: PremiumFunction, cfg: SolverConfig) -> Tuple[float, float]:
    sched = IndemnitySchedule.from_m(m, cfg.gamma, g, cfg.root_tolerance)
    gamma, d, spec = cfg.gamma, sched.deductible, cfg.quadrature

    def below(x):
        return np.exp(gamma * x)

    def above(x):
        return np.exp(gamma * (x - sched(x)))

    v1, e1 = integrate_dF(dist, below, 0.0, d, spec, full_output=True)
    v2, e2 = integrate_dF(dist, above, d, math.inf, spec, sched.breakpoints,
                          _retained_tail(dist, g, m, gamma), full_output=True)
    return v1 + v2, e1 + e2


def h_map(m: float, dist: LossDistribution, g: PremiumFunction, cfg: SolverConfig) -> float:
    """One step of the iteration: E[exp(gamma (X - I_m(X)))] for the contract induced by m."""
    if m < 1.0:
        raise ValueError("m must be >= 1")
    return _h(m, dist, g, cfg)[0]


def derivative_moment(dist: LossDistribution, g: PremiumFunction, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """E[g'(X+)]; finiteness keeps M finite when E[exp(gamma X)] is not."""
    closed = g.deriv_tail(dist, 0.0)
    if closed is not None:
        return closed
    return integrate_dF(dist, lambda x: np.asarray(g.deriv(x, "right"), dtype=float), 0.0, math.inf, spec)


def initial_m(dist: LossDistribution, cfg: SolverConfig) -> float:
    if cfg.m0_strategy is M0Strategy.LOWER:
        return 1.0
    if cfg.m0_strategy is M0Strategy.CUSTOM:
        return float(cfg.m0_value)
    try:
        return exp_moment(dist, cfg.gamma, cfg.quadrature)
    except DivergentMoment as exc:
        raise DivergentMoment(f"{exc}; the upper endpoint of M is infinite, use m0='lower'") from exc


def _check_premium(dist: LossDistribution, g: PremiumFunction) -> None:
    if not isinstance(g, CustomConvex):
        return
    q = dist.quantile(1.0 - 1e-9) if not dist.is_discrete else dist.support_upper
    report = validate(g, grid_max=max(q, 1.0), grid_points=1000)
    if not report.ok:
        raise InvalidPremium(f"premium function fails: {', '.join(report.failures)}")


def fixed_point_solve(dist: LossDistribution, g: PremiumFunction, cfg: SolverConfig
                      ) -> Tuple[IndemnitySchedule, SolverTrace]:
    """Iterate M_n = h(M_{n-1}) from the configured M0 until |M_n - M_{n-1}| <= m_tolerance.

    Returns the schedule at the final M_n and the per-iteration trace; raises
    NoConvergence (carrying the trace) if ``max_iterations`` is exhausted.
    """
    _check_premium(dist, g)
    deriv_moment = None
    if cfg.gamma >= dist.exp_abscissa:
        deriv_moment = derivative_moment(dist, g, cfg.quadrature)
    m_prev = initial_m(dist, cfg)
    trace = SolverTrace(m0=m_prev, derivative_moment=deriv_moment)
    last_step = None
    for n in range(1, cfg.max_iterations + 1):
        d_n = deductible_from_m(m_prev, cfg.gamma, g, strict=False)
        m_next, err = _h(m_prev, dist, g, cfg)
        step = abs(m_next - m_prev)
        trace.iterations.append(IterationRecord(n, m_next, d_n, step))
        trace.quadrature_error = max(trace.quadrature_error, err)
        if n == 1:
            if step <= cfg.m_tolerance:
                trace.direction = "stationary"
            else:
                trace.direction = "increasing" if m_next > m_prev else "decreasing"
        m_prev = m_next
        if last_step is not None and last_step > 0.0:
            ratio = min(step / last_step, _MAX_RATIO)
            trace.distance_estimate = step * ratio / (1.0 - ratio)
        last_step = step
        if step <= cfg.m_tolerance:
            if cfg.stopping == "step" or step == 0.0 or trace.distance_estimate <= cfg.m_tolerance:
                trace.converged = True
                break
    if not trace.converged:
        raise NoConvergence(
            f"no convergence after {cfg.max_iterations} iterations (last step {step:.3e})", trace
        )
    schedule = IndemnitySchedule.from_m(m_prev, cfg.gamma, g, cfg.root_tolerance, strict=True)
    trace.fixed_point_residual = abs(h_map(m_prev, dist, g, cfg) - m_prev)
    return schedule, trace


def _evaluation_grid(dist: LossDistribution, breakpoints: Sequence[float], points: int = 1000) -> np.ndarray:
    if dist.is_discrete:
        return dist.xs
    top = dist.quantile(1.0 - 1e-6) if not math.isfinite(dist.support_upper) else dist.support_upper
    return np.unique(np.concatenate([np.linspace(0.0, top, points), [b for b in breakpoints if b <= top]]))


def check_admissible(indemnity: Callable, x: np.ndarray, slack: float = 1e-10) -> None:
    vals = _vectorize(indemnity)(np.asarray(x, dtype=float))
    bad = (vals < -slack) | (vals > x + slack) | ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise InadmissibleIndemnity(f"I({x[i]:.6g}) = {vals[i]:.6g} violates 0 <= I(x) <= x")


def objective(indemnity: Callable, dist: LossDistribution, g: PremiumFunction, cfg: SolverConfig,
              breakpoints: Optional[Sequence[float]] = None) -> ObjectiveReport:
    """J(I) = exp(gamma pi(I)) E[exp(gamma (X - I(X)))] and its certainty equivalent."""
    gamma, spec = cfg.gamma, cfg.quadrature
    bps = tuple(breakpoints) if breakpoints is not None else tuple(getattr(indemnity, "breakpoints", ()))
    check_admissible(indemnity, _evaluation_grid(dist, bps))
    ind = _vectorize(indemnity)
    pi = premium(g, ind, dist, spec, bps)
    if isinstance(indemnity, IndemnitySchedule):
        tail = _retained_tail(dist, g, indemnity.m_star, gamma)
    elif isinstance(dist, Exponential) and gamma < dist.rate:
        lam = dist.rate

        def tail(a):
            return lam / (lam - gamma) * math.exp(-(lam - gamma) * a)
    else:
        tail = None
    retained = integrate_dF(dist, lambda x: np.exp(gamma * (x - ind(x))), 0.0, math.inf, spec, bps, tail)
    value = math.exp(gamma * pi) * retained
    return ObjectiveReport(pi, value, pi + math.log(retained) / gamma, retained)


@dataclass(frozen=True)
class ComonotoneResult:
    ok: bool
    violation: Optional[str] = None
    index: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok


def check_comonotone(indemnity, grid, deductible: Optional[float] = None,
                     plateau_levels: Optional[Sequence[float]] = None,
                     slack: float = 1e-9) -> ComonotoneResult:
    """Check 0 <= I(x') - I(x) <= x' - x on adjacent grid points.

    ``indemnity`` is a callable or an array of values on ``grid``.  When a
    deductible is known (taken from a schedule automatically) the payment must
    also increase strictly beyond it, except along flat layers at
    ``plateau_levels``.
    """
    x = np.asarray(grid, dtype=float)
    if np.any(np.diff(x) < 0.0) or np.any(x < 0.0):
        raise ValueError("grid must be sorted and nonnegative")
    if isinstance(indemnity, IndemnitySchedule):
        deductible = indemnity.deductible if deductible is None else deductible
        plateau_levels = indemnity.plateau_levels if plateau_levels is None else plateau_levels
    if callable(indemnity):
        vals = _vectorize(indemnity)(x)
    else:
        vals = np.asarray(indemnity, dtype=float)
        if vals.shape != x.shape:
            raise ValueError("indemnity values must match the grid")
    dI = np.diff(vals)
    dx = np.diff(x)
    down = np.nonzero(dI < -slack)[0]
    if down.size:
        i = int(down[0])
        return ComonotoneResult(False, f"I decreases between x={x[i]:.9g} and x={x[i + 1]:.9g}", i)
    steep = np.nonzero(dI > dx + slack)[0]
    if steep.size:
        i = int(steep[0])
        return ComonotoneResult(False, f"I rises faster than x between x={x[i]:.9g} and x={x[i + 1]:.9g}", i)
    if deductible is not None:
        levels = np.asarray(plateau_levels or (), dtype=float)
        for i in np.nonzero((x[:-1] >= deductible) & (dI <= 0.0))[0]:
            flat = levels.size and np.any(
                (np.abs(vals[i] - levels) <= slack) & (np.abs(vals[i + 1] - levels) <= slack)
            )
            if not flat:
                return ComonotoneResult(
                    False, f"I not strictly increasing beyond the deductible at x={x[i]:.9g}", int(i)
                )
    return ComonotoneResult(True)


@dataclass(frozen=True)
class FirstOrderReport:
    max_abs_kappa: float
    max_rel_kappa: float
    plateau_points: int
    plateau_violations: int
    points: int


def first_order_residuals(schedule: IndemnitySchedule, x, plateau_slack: float = 1e-10) -> FirstOrderReport:
    """kappa(I(x)) on losses beyond the deductible.

    Points whose payment sits on a kink of g are checked for the
    subdifferential condition exp(gamma (x - y)) in m [g'(y-), g'(y+)] instead.
    """
    x = np.asarray(x, dtype=float)
    x = x[x > schedule.deductible]
    y = np.asarray(schedule(x))
    g, m, gamma = schedule.premium_fn, schedule.m_star, schedule.gamma
    lhs = np.exp(gamma * (x - y))
    on_kink = np.zeros(x.shape, dtype=bool)
    violations = 0
    for k in g.kinks:
        at = y == k
        on_kink |= at
        if at.any():
            lo = m * float(g.deriv(k, "left"))
            hi = m * float(g.deriv(k, "right"))
            bad = (lhs[at] < lo * (1.0 - plateau_slack)) | (lhs[at] > hi * (1.0 + plateau_slack))
            violations += int(bad.sum())
    smooth = ~on_kink
    kap = lhs[smooth] - m * np.asarray(g.deriv(y[smooth], "right"), dtype=float)
    max_abs = float(np.max(np.abs(kap))) if kap.size else 0.0
    max_rel = float(np.max(np.abs(kap) / lhs[smooth])) if kap.size else 0.0
    return FirstOrderReport(max_abs, max_rel, int(on_kink.sum()), violations, int(x.size))
