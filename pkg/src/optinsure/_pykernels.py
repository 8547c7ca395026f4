"""Pure numpy root finders for the optimal payment y = I(x).

For x above the deductible the payment solves

    phi(y) = gamma (x - y) - log(m) - log(g'(y+)) = 0,   0 < y < x,

which is the log of the first-order condition.  phi is strictly decreasing,
so bisection on [0, x] converges; a downward jump of phi at a kink of g is
resolved to the kink itself.  Elements stop bisecting individually once
their bracket is narrower than ``tol`` so results match the compiled kernel
element by element.  The final bracket is closed with one interpolation
step, which is exact on linear pieces of phi and keeps the payment smooth in
x well below ``tol`` (quadrature downstream relies on that).
"""
from __future__ import annotations

import math

import numpy as np

FAMILY_EXPECTED_VALUE = 0
FAMILY_QUADRATIC = 1
FAMILY_STOP_LOSS = 2

_MAX_BISECTIONS = 200


def _log_gprime(family: int, params: np.ndarray, y: np.ndarray) -> np.ndarray:
    if family == FAMILY_EXPECTED_VALUE:
        return np.full(y.shape, math.log1p(params[0]))
    if family == FAMILY_QUADRATIC:
        return np.log1p(2.0 * params[0] * y)
    k = int(params[0])
    slope = np.ones_like(y)
    for i in range(k):
        slope += params[1 + i] * (y >= params[1 + k + i])
    return np.log(slope)


def _stop_loss_plateaus(params: np.ndarray):
    """(kink, log slope left, log slope right) for each threshold."""
    k = int(params[0])
    out, acc = [], 1.0
    for i in range(k):
        left = acc
        acc += params[1 + i]
        out.append((params[1 + k + i], math.log(left), math.log(acc)))
    return out


def _bisect(x, phi, tol):
    all_idx = np.arange(x.size)
    lo = np.zeros_like(x)
    hi = x.copy()
    flo = phi(all_idx, lo)
    fhi = phi(all_idx, hi)
    active = hi - lo > tol
    for _ in range(_MAX_BISECTIONS):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        mid = 0.5 * (lo[idx] + hi[idx])
        fmid = phi(idx, mid)
        right = fmid > 0.0
        lo[idx[right]] = mid[right]
        flo[idx[right]] = fmid[right]
        hi[idx[~right]] = mid[~right]
        fhi[idx[~right]] = fmid[~right]
        active[idx] = hi[idx] - lo[idx] > tol
    return _close_bracket(lo, hi, flo, fhi)


def _close_bracket(lo, hi, flo, fhi):
    out = 0.5 * (lo + hi)
    ok = (flo > 0.0) & (fhi <= 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = lo + flo * (hi - lo) / (flo - fhi)
    ok &= (y >= lo) & (y <= hi)
    out[ok] = y[ok]
    return out


def indemnity_builtin(x, m, gamma, family, params, tol):
    """Optimal payments at losses ``x`` for a built-in premium family."""
    x = np.ascontiguousarray(x, dtype=float)
    params = np.asarray(params, dtype=float)
    log_m = math.log(m)
    d = (log_m + float(_log_gprime(family, params, np.zeros(1))[0])) / gamma
    out = np.zeros_like(x)
    todo = x > d
    if family == FAMILY_STOP_LOSS:
        for kink, log_left, log_right in _stop_loss_plateaus(params):
            lhs = gamma * (x - kink)
            hit = todo & (kink < x) & (lhs >= log_m + log_left) & (lhs <= log_m + log_right)
            out[hit] = kink
            todo &= ~hit
    idx = np.nonzero(todo)[0]
    if idx.size:
        xs = x[idx]

        def phi(sub, y):
            return gamma * (xs[sub] - y) - log_m - _log_gprime(family, params, y)

        out[idx] = _bisect(xs, phi, tol)
    return out


def indemnity_generic(x, m, gamma, deriv_right, deriv_left, kinks, tol):
    """Same root finder for an arbitrary right-derivative callable."""
    x = np.ascontiguousarray(x, dtype=float)
    log_m = math.log(m)
    d = (log_m + math.log(float(deriv_right(np.zeros(1))[0]))) / gamma
    out = np.zeros_like(x)
    todo = x > d
    for kink in kinks:
        if kink <= 0.0:
            continue
        k = np.array([kink])
        log_left = math.log(float(deriv_left(k)[0]))
        log_right = math.log(float(deriv_right(k)[0]))
        lhs = gamma * (x - kink)
        hit = todo & (kink < x) & (lhs >= log_m + log_left) & (lhs <= log_m + log_right)
        out[hit] = kink
        todo &= ~hit
    idx = np.nonzero(todo)[0]
    if idx.size:
        xs = x[idx]

        def phi(sub, y):
            return gamma * (xs[sub] - y) - log_m - np.log(deriv_right(y))

        out[idx] = _bisect(xs, phi, tol)
    return out
