"""Independent reference solutions used to check the solver.

Nothing here calls the solver's root finder, map h or quadrature for the
closed forms: the deductible and multi-layer cases are solved in closed form
against an exponential loss, the quadratic case goes through Lambert W and
scipy's QUADPACK, and the brute-force search enumerates a payment grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, special

from .distributions import LossDistribution, PiecewiseEmpirical, integrate_dF
from .errors import BudgetExceeded, NoRoot
from .premium import PremiumFunction


@dataclass(frozen=True)
class Branch:
    lower: float
    upper: float
    slope: int
    # I(x) = slope * x + offset on (lower, upper]
    offset: float


@dataclass(frozen=True)
class ClosedFormSolution:
    family: str
    m: float
    deductible: float
    gamma: float
    params: Dict[str, object]
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    branches: Tuple[Branch, ...] = ()

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.asarray(self.evaluator(np.atleast_1d(arr))).reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        if self.branches:
            return tuple(b.lower for b in self.branches[1:])
        return (self.deductible,)


def _bracket_root(fn: Callable[[float], float], lo: float, hi: float, limit: float = 1e6) -> Tuple[float, float]:
    f_lo = fn(lo)
    while np.sign(fn(hi)) == np.sign(f_lo):
        hi *= 2.0
        if hi > limit:
            raise NoRoot(f"no sign change on [{lo:g}, {limit:g}]")
    return lo, hi


def _int_exp(a: float, b: float, rate: float) -> float:
    """Integral of exp(rate x) over [a, b], stable as rate -> 0."""
    width = b - a
    return math.exp(rate * a) * width * float(special.exprel(rate * width))


def oracle_deductible(gamma: float, lam: float, theta: float) -> ClosedFormSolution:
    """Expected-value premium, Exp(lam) loss: optimal contract is (x - d)_+.

    d solves exp(gamma d)/(1 + theta) = E[exp(gamma min(X, d))], which is the
    same as (1/(1+theta)) e^{gamma d} - gamma/(gamma-lam) e^{(gamma-lam) d}
    + lam/(gamma-lam) = 0 but stays finite at gamma == lam.
    """
    if min(gamma, lam, theta) <= 0.0:
        raise ValueError("parameters must be positive")

    def phi(d):
        capped = lam * _int_exp(0.0, d, gamma - lam) + math.exp((gamma - lam) * d)
        return math.exp(gamma * d) / (1.0 + theta) - capped

    lo, hi = _bracket_root(phi, 0.0, 1.0)
    d = optimize.brentq(phi, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    m = math.exp(gamma * d) / (1.0 + theta)

    def evaluator(x):
        return np.maximum(np.asarray(x, dtype=float) - d, 0.0)

    return ClosedFormSolution(
        "deductible", m, d, gamma, {"lambda": lam, "theta": theta}, evaluator,
        (Branch(0.0, d, 0, 0.0), Branch(d, math.inf, 1, -d)),
    )


def lambert_w(z: float) -> float:
    """Principal branch W(z) for z >= 0 by Halley iteration."""
    z = float(z)
    if z < 0.0 or math.isnan(z):
        raise ValueError("lambert_w needs z >= 0")
    if z == 0.0:
        return 0.0
    if math.isinf(z):
        return math.inf
    if z < 3.0:
        w = math.log1p(z)
    else:
        l1 = math.log(z)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - z
        w_new = w - f / (ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0))
        if abs(w_new - w) <= 4e-16 * (1.0 + abs(w_new)):
            return w_new
        w = w_new
    return w


def lambert_w_log(t: float) -> float:
    """W(exp(t)) without forming exp(t); solves w + log(w) = t."""
    if t < 500.0:
        return lambert_w(math.exp(t))
    w = t - math.log(t)
    for _ in range(100):
        f = w + math.log(w) - t
        fp = 1.0 + 1.0 / w
        fpp = -1.0 / (w * w)
        w_new = w - 2.0 * f * fp / (2.0 * fp * fp - f * fpp)
        if abs(w_new - w) <= 4e-16 * abs(w_new):
            return w_new
        w = w_new
    return w


def quadratic_indemnity(x, gamma: float, alpha: float, d: float):
    """Closed-form optimal payment for g(x) = x + alpha x^2 given the deductible."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(arr)
    c = 1.0 / (2.0 * alpha)
    for i, xi in enumerate(arr):
        if xi > d:
            t = math.log(gamma * c) + gamma * (xi - d + c)
            out[i] = max(lambert_w_log(t) / gamma - c, 0.0)
    return out


def oracle_quadratic(gamma: float, lam: float, alpha: float,
                     bracket: Tuple[float, float] = (1e-6, 20.0)) -> ClosedFormSolution:
    """Quadratic premium, Exp(lam) loss: payment via Lambert W, deductible by outer bisection.

    The outer equation is
        lam int_0^d e^{(gamma-lam) x} dx + lam int_d^inf e^{(gamma-lam) x - gamma I_d(x)} dx = e^{gamma d},
    with the inner integral done by QUADPACK.
    """
    if min(gamma, lam, alpha) <= 0.0:
        raise ValueError("parameters must be positive")

    def phi(d):
        head = lam * _int_exp(0.0, d, gamma - lam)

        def f(x):
            return lam * math.exp((gamma - lam) * x - gamma * quadratic_indemnity(x, gamma, alpha, d)[0])

        span = 60.0 / lam
        body = integrate.quad(f, d, d + span, epsabs=1e-14, epsrel=1e-13, limit=500)[0]
        tail = integrate.quad(f, d + span, math.inf, epsabs=1e-15, limit=200)[0]
        return head + body + tail - math.exp(gamma * d)

    lo, hi = bracket
    grid = np.linspace(lo, hi, 41)
    signs = np.sign([phi(v) for v in grid])
    changes = int(np.count_nonzero(np.diff(signs)))
    if changes == 0:
        raise NoRoot(f"no sign change of the deductible equation on [{lo:g}, {hi:g}]")
    if changes > 1:
        raise NoRoot("deductible equation is not monotone on the bracket")
    k = int(np.nonzero(np.diff(signs))[0][0])
    d = optimize.brentq(phi, grid[k], grid[k + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)
    m = math.exp(gamma * d)

    def evaluator(x):
        return quadratic_indemnity(x, gamma, alpha, d)

    return ClosedFormSolution("quadratic_lambert_w", m, d, gamma,
                              {"lambda": lam, "alpha": alpha}, evaluator)


def multilayer_branches(m: float, gamma: float, loadings: Sequence[float],
                        thresholds: Sequence[float]) -> Tuple[Branch, ...]:
    """Alternating slope-1 / flat layers for the stop-loss premium at a given M."""
    d = math.log(m) / gamma
    cum = [0.0]
    acc = 1.0
    for t in loadings:
        acc += t
        cum.append(math.log(acc) / gamma)
    branches = [Branch(0.0, d, 0, 0.0)]
    start = d
    for i, delta in enumerate(thresholds):
        enter = delta + d + cum[i]
        leave = delta + d + cum[i + 1]
        branches.append(Branch(start, enter, 1, -(d + cum[i])))
        branches.append(Branch(enter, leave, 0, float(delta)))
        start = leave
    branches.append(Branch(start, math.inf, 1, -(d + cum[-1])))
    return tuple(branches)


def _evaluate_branches(branches: Sequence[Branch], x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for b in branches:
        sel = (x > b.lower) & (x <= b.upper) if b.lower > 0.0 else (x >= 0.0) & (x <= b.upper)
        out[sel] = b.slope * x[sel] + b.offset
    return out


def _multilayer_retained_moment(m, gamma, lam, branches) -> float:
    """E[exp(gamma (X - I(X)))] for X ~ Exp(lam), summed piece by piece."""
    parts = []
    for b in branches:
        a, c = b.lower, b.upper
        if b.slope == 0:
            # retention x - offset
            parts.append(lam * math.exp(-gamma * b.offset) * _int_exp(a, c, gamma - lam)
                         if math.isfinite(c) else math.inf)
        else:
            # constant retention -offset
            tail = math.exp(-lam * c) if math.isfinite(c) else 0.0
            parts.append(math.exp(-gamma * b.offset) * (math.exp(-lam * a) - tail))
    return math.fsum(parts)


def oracle_multilayer(gamma: float, lam: float, loadings: Sequence[float],
                      thresholds: Sequence[float]) -> ClosedFormSolution:
    """Stop-loss premium with k layers, Exp(lam) loss; M by bisection on the closed-form moment."""
    loadings = tuple(float(t) for t in loadings)
    thresholds = tuple(float(t) for t in thresholds)
    if min(gamma, lam) <= 0.0 or min(loadings) <= 0.0 or thresholds[0] <= 0.0:
        raise ValueError("parameters must be positive")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")

    def excess(m):
        branches = multilayer_branches(m, gamma, loadings, thresholds)
        return _multilayer_retained_moment(m, gamma, lam, branches) - m

    if excess(1.0) <= 0.0:
        raise NoRoot("moment map does not exceed the identity at m = 1")
    lo, hi = _bracket_root(excess, 1.0, 2.0)
    m = optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    branches = multilayer_branches(m, gamma, loadings, thresholds)

    def evaluator(x):
        return _evaluate_branches(branches, np.asarray(x, dtype=float))

    return ClosedFormSolution(
        "multilayer", m, math.log(m) / gamma, gamma,
        {"lambda": lam, "loadings": loadings, "thresholds": thresholds}, evaluator, branches,
    )


@dataclass(frozen=True)
class BruteForceResult:
    y: np.ndarray
    objective: float
    candidates: int


def _payment_grid(x: float, step: float) -> np.ndarray:
    n = int(math.floor(x / step + 1e-9))
    grid = step * np.arange(n + 1)
    if x - grid[-1] > 1e-12:
        grid = np.append(grid, x)
    return grid


def brute_force_discrete(atoms: Sequence[Tuple[float, float]], g: PremiumFunction, gamma: float,
                         grid_step: float, comonotone: bool = True, cap: int = 10_000_000,
                         block: int = 200_000) -> BruteForceResult:
    """Exhaustive minimum of exp(gamma sum p g(y)) * sum p exp(gamma (x - y)) over a payment grid.

    With ``comonotone`` the search keeps only 0 <= y_j - y_i <= x_j - x_i.
    Ties go to the lexicographically smallest payment vector.
    """
    dist = PiecewiseEmpirical(tuple(atoms))
    xs, ps = dist.xs, dist.ps
    if xs.size > 6:
        raise BudgetExceeded("at most 6 atoms")
    grids = [_payment_grid(x, grid_step) for x in xs]

    ys = grids[0][:, None]
    sg = ps[0] * np.asarray(g.value(grids[0]))
    se = ps[0] * np.exp(gamma * (xs[0] - grids[0]))
    for i in range(1, xs.size):
        gi = grids[i]
        gval = ps[i] * np.asarray(g.value(gi))
        gexp = ps[i] * np.exp(gamma * (xs[i] - gi))
        gap = xs[i] - xs[i - 1]
        new_y, new_sg, new_se = [], [], []
        total = 0
        for s in range(0, ys.shape[0], block):
            prev = ys[s:s + block, -1][:, None]
            if comonotone:
                mask = (gi[None, :] >= prev - 1e-12) & (gi[None, :] - prev <= gap + 1e-12)
            else:
                mask = np.ones((prev.shape[0], gi.size), dtype=bool)
            r, c = np.nonzero(mask)
            total += r.size
            if total > cap:
                raise BudgetExceeded(f"more than {cap} candidates after atom {i}")
            new_y.append(np.column_stack([ys[s:s + block][r], gi[c]]))
            new_sg.append(sg[s:s + block][r] + gval[c])
            new_se.append(se[s:s + block][r] + gexp[c])
        ys = np.concatenate(new_y)
        sg = np.concatenate(new_sg)
        se = np.concatenate(new_se)
    obj = np.exp(gamma * sg) * se
    best = int(np.argmin(obj))
    return BruteForceResult(ys[best].copy(), float(obj[best]), int(ys.shape[0]))


def discrete_objective(atoms: Sequence[Tuple[float, float]], y: Sequence[float], g: PremiumFunction,
                       gamma: float) -> float:
    xs = np.array([a[0] for a in atoms])
    ps = np.array([a[1] for a in atoms])
    y = np.asarray(y, dtype=float)
    return float(math.exp(gamma * math.fsum(ps * np.asarray(g.value(y)))) * math.fsum(ps * np.exp(gamma * (xs - y))))


def bump(x, x0: float, delta: float):
    """Quadratic bump (x - x0 + delta)(x0 + delta - x) supported on (x0 - delta, x0 + delta)."""
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x - x0) < delta, (x - (x0 - delta)) * (x0 + delta - x), 0.0)


@dataclass
class PerturbationReport:
    seed: int
    trials: int
    min_gap: float
    gaps: np.ndarray = field(repr=False)
    samples: List[Tuple[float, float, float]] = field(repr=False, default_factory=list)
    tolerance: float = 1e-8

    @property
    def improving(self) -> int:
        return int(np.count_nonzero(self.gaps < -self.tolerance))

    @property
    def passed(self) -> bool:
        return self.improving == 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "trials": self.trials, "min_gap": self.min_gap,
                "improving": self.improving, "tolerance": self.tolerance}


def perturbation_test(indemnity, dist: LossDistribution, g: PremiumFunction, gamma: float,
                      trials: int = 200, seed: int = 0, spec=None, scale: float = 1.0,
                      tolerance: float = 1e-8, x_range: Optional[Tuple[float, float]] = None
                      ) -> PerturbationReport:
    """Random admissible bumps I + eps*eta around ``indemnity``; gaps J(I_eps) - J(I).

    Each trial draws a centre x0, half-width delta, a sign and a fraction of
    the room left inside the admissible band, so I_eps stays in [0, x].
    Gaps are assembled from integrals over the bump support only, which keeps
    them accurate to well below the tolerance.
    """
    from .distributions import DEFAULT_QUADRATURE
    from .premium import premium

    spec = spec or DEFAULT_QUADRATURE
    rng = np.random.default_rng(seed)
    ind = indemnity
    bps = tuple(getattr(indemnity, "breakpoints", ()))

    pi0 = premium(g, ind, dist, spec, bps)
    tail = None
    m = getattr(indemnity, "m_star", None)
    if m is not None and g.deriv_tail(dist, 0.0) is not None:
        def tail(a):
            return m * g.deriv_tail(dist, a)
    a0 = integrate_dF(dist, lambda x: np.exp(gamma * (x - ind(x))), 0.0, math.inf, spec, bps, tail)
    base = math.exp(gamma * pi0)

    if x_range is None:
        hi = dist.support_upper if dist.is_discrete else dist.quantile(0.99)
        x_range = (0.0, hi)
    lo_x, hi_x = x_range
    width = hi_x - lo_x
    gaps = np.zeros(trials)
    samples = []
    for t in range(trials):
        delta = rng.uniform(0.01, 0.1) * width
        x0 = rng.uniform(lo_x + delta, hi_x)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        frac = rng.uniform(0.05, 1.0)
        a, b = x0 - delta, x0 + delta
        probe = np.linspace(a, b, 257)
        base_vals = np.asarray(ind(probe))
        room_up = float(np.min(probe - base_vals))
        room_down = float(np.min(base_vals[1:-1])) if probe.size > 2 else 0.0
        room = room_up if sign > 0 else room_down
        if room <= 0.0:
            sign, room = -sign, (room_down if sign > 0 else room_up)
        if room <= 0.0:
            samples.append((x0, delta, 0.0))
            continue
        eps = sign * scale * frac * room / (delta * delta)
        bp = tuple(p for p in bps if a < p < b) + (x0,)

        def dpi(x, eps=eps, x0=x0, delta=delta):
            y = ind(x)
            return g.value(y + eps * bump(x, x0, delta)) - g.value(y)

        def dret(x, eps=eps, x0=x0, delta=delta):
            r = gamma * (x - ind(x))
            return np.exp(r) * np.expm1(-gamma * eps * bump(x, x0, delta))

        d_pi = integrate_dF(dist, dpi, a, b, spec, bp)
        d_a = integrate_dF(dist, dret, a, b, spec, bp)
        gaps[t] = base * (math.expm1(gamma * d_pi) * (a0 + d_a) + d_a)
        samples.append((x0, delta, eps))
    return PerturbationReport(seed, trials, float(gaps.min()) if trials else 0.0, gaps, samples, tolerance)
