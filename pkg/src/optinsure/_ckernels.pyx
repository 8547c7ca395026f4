# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled root finder for the built-in premium families.

Mirrors ``_pykernels.indemnity_builtin`` element by element: same plateau
test, same log-form bisection, same per-element stopping rule, same closing
interpolation step.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p

cnp.import_array()

DEF FAMILY_EXPECTED_VALUE = 0
DEF FAMILY_QUADRATIC = 1
DEF FAMILY_STOP_LOSS = 2
DEF MAX_BISECTIONS = 200


cdef inline double _log_gprime(int family, const double[::1] params, double y) noexcept nogil:
    cdef int k, i
    cdef double slope
    if family == FAMILY_EXPECTED_VALUE:
        return log1p(params[0])
    if family == FAMILY_QUADRATIC:
        return log1p(2.0 * params[0] * y)
    k = <int>params[0]
    slope = 1.0
    for i in range(k):
        if y >= params[1 + k + i]:
            slope += params[1 + i]
    return log(slope)


cdef double _solve_one(double x, double log_m, double gamma, int family,
                       const double[::1] params, double tol) noexcept nogil:
    cdef double lo = 0.0, hi = x, mid, lhs, left, right, kink, flo, fhi, fmid, y
    cdef int it, i, k
    if family == FAMILY_STOP_LOSS:
        k = <int>params[0]
        left = 1.0
        for i in range(k):
            kink = params[1 + k + i]
            right = left + params[1 + i]
            lhs = gamma * (x - kink)
            if kink < x and lhs >= log_m + log(left) and lhs <= log_m + log(right):
                return kink
            left = right
    flo = gamma * (x - lo) - log_m - _log_gprime(family, params, lo)
    fhi = gamma * (x - hi) - log_m - _log_gprime(family, params, hi)
    for it in range(MAX_BISECTIONS):
        if not hi - lo > tol:
            break
        mid = 0.5 * (lo + hi)
        fmid = gamma * (x - mid) - log_m - _log_gprime(family, params, mid)
        if fmid > 0.0:
            lo = mid
            flo = fmid
        else:
            hi = mid
            fhi = fmid
    if flo > 0.0 and fhi <= 0.0:
        y = lo + flo * (hi - lo) / (flo - fhi)
        if y >= lo and y <= hi:
            return y
    return 0.5 * (lo + hi)


def indemnity_builtin(x, double m, double gamma, int family, params, double tol):
    """Optimal payments at losses ``x`` for a built-in premium family."""
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], j
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double log_m = log(m)
    cdef double d = (log_m + _log_gprime(family, pv, 0.0)) / gamma
    with nogil:
        for j in range(n):
            if xv[j] > d:
                out[j] = _solve_one(xv[j], log_m, gamma, family, pv, tol)
    return out_arr
