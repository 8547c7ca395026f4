"""Backend selection for the indemnity root finder.

The compiled extension is used when it was built; otherwise the numpy
fallback.  Set ``OPTINSURE_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels
from .errors import BracketFailure
from .premium import FAMILY_CUSTOM, PremiumFunction

python_indemnity = _pykernels.indemnity_builtin

try:
    if os.environ.get("OPTINSURE_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from ._ckernels import indemnity_builtin as compiled_indemnity
except ImportError:
    compiled_indemnity = None

BACKEND = "cython" if compiled_indemnity is not None else "python"
_builtin = compiled_indemnity if compiled_indemnity is not None else python_indemnity


def solve_indemnity(x, m: float, gamma: float, g: PremiumFunction, tol: float) -> np.ndarray:
    """Vectorised optimal payment at each loss in ``x`` for a given M."""
    x = np.ascontiguousarray(x, dtype=float).ravel()
    if g.family_code != FAMILY_CUSTOM:
        return _builtin(x, m, gamma, g.family_code, g.kernel_params(), tol)

    def right(y):
        return np.asarray(g.deriv(y, "right"), dtype=float).reshape(np.shape(y))

    def left(y):
        return np.asarray(g.deriv(y, "left"), dtype=float).reshape(np.shape(y))

    pos = x[x > 0.0]
    if pos.size and np.any(m * right(pos) < 1.0):
        raise BracketFailure("kappa is positive at y = x; g' < 1/m somewhere")
    return _pykernels.indemnity_generic(x, m, gamma, right, left, g.kinks, tol)
