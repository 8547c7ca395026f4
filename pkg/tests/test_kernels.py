import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optinsure import kernels
from optinsure.errors import BracketFailure
from optinsure.premium import CustomConvex, ExpectedValue, MultiLayerStopLoss, Quadratic

FAMILIES = {
    "expected_value": ExpectedValue(1.0 / 3.0),
    "quadratic": Quadratic(0.5),
    "stop_loss": MultiLayerStopLoss((0.1, 0.2), (1.0, 2.0)),
}
needs_compiled = pytest.mark.skipif(kernels.compiled_indemnity is None, reason="extension not built")


def close_ulps(a, b, ulps=4):
    return bool(np.all(np.abs(a - b) <= ulps * np.spacing(np.maximum(np.abs(a), np.abs(b)) + 1.0)))


def run(backend, x, m, gamma, g, tol=1e-12):
    return backend(np.asarray(x, dtype=float), m, gamma, g.family_code, g.kernel_params(), tol)


class TestBackends:
    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")

    @needs_compiled
    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_agree_to_rounding(self, name):
        # numpy's vectorised log1p and libm's can differ in the last bit.
        g = FAMILIES[name]
        x = np.linspace(0.0, 20.0, 20001)
        a = run(kernels.python_indemnity, x, 1.7, 0.8, g)
        b = run(kernels.compiled_indemnity, x, 1.7, 0.8, g)
        assert close_ulps(a, b)

    @needs_compiled
    @given(st.floats(1.0, 6.0), st.floats(0.1, 3.0), st.sampled_from(sorted(FAMILIES)))
    @settings(max_examples=40, deadline=None)
    def test_agree_random(self, m, gamma, name):
        g = FAMILIES[name]
        x = np.linspace(0.0, 15.0, 301)
        assert close_ulps(run(kernels.python_indemnity, x, m, gamma, g),
                          run(kernels.compiled_indemnity, x, m, gamma, g))


class TestRoot:
    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_admissible_and_monotone(self, name):
        g = FAMILIES[name]
        x = np.linspace(0.0, 12.0, 4001)
        y = kernels.solve_indemnity(x, 2.0, 1.0, g, 1e-12)
        assert np.all(y >= 0.0) and np.all(y[1:] < x[1:])
        assert np.all(np.diff(y) >= -1e-12)
        assert np.all(np.diff(y) <= np.diff(x) + 1e-12)

    def test_deductible_boundary(self):
        g = FAMILIES["expected_value"]
        d = math.log(3.0 * 4.0 / 3.0) / 2.0
        assert kernels.solve_indemnity(np.array([d]), 3.0, 2.0, g, 1e-12)[0] == 0.0

    def test_linear_closed_form(self):
        g = FAMILIES["expected_value"]
        x = np.linspace(1.0, 10.0, 50)
        y = kernels.solve_indemnity(x, 3.0, 2.0, g, 1e-12)
        assert np.max(np.abs(y - (x - math.log(2.0)))) <= 1e-12

    def test_bracket_signs(self):
        g = FAMILIES["quadratic"]
        m, gamma, tol = 5.4, 2.0, 1e-12
        for x in (1.0, 3.0, 7.0):
            y = kernels.solve_indemnity(np.array([x]), m, gamma, g, tol)[0]
            kap = lambda v: math.exp(gamma * (x - v)) - m * (1.0 + 2 * 0.5 * v)
            assert kap(y - 4 * tol) > 0.0 > kap(y + 4 * tol)

    def test_plateau_exact(self):
        g = FAMILIES["stop_loss"]
        m, gamma = 1.2288, 0.5
        d = 2.0 * math.log(m)
        x = np.linspace(1.0 + d + 1e-9, 1.0 + d + 2.0 * math.log(1.1) - 1e-9, 50)
        assert np.all(kernels.solve_indemnity(x, m, gamma, g, 1e-12) == 1.0)


class TestGeneric:
    def test_custom_matches_builtin(self):
        q = FAMILIES["quadratic"]
        c = CustomConvex(lambda y: y + 0.5 * y * y, lambda y: 1.0 + y)
        x = np.linspace(0.0, 10.0, 501)
        a = kernels.solve_indemnity(x, 2.5, 1.5, q, 1e-12)
        b = kernels.solve_indemnity(x, 2.5, 1.5, c, 1e-12)
        assert np.max(np.abs(a - b)) <= 1e-11

    def test_custom_kinks_match_builtin(self):
        s = FAMILIES["stop_loss"]
        c = CustomConvex(lambda y: s.value(y), lambda y: s.deriv(y, "right"), kinks=(1.0, 2.0))
        x = np.linspace(0.0, 10.0, 501)
        a = kernels.solve_indemnity(x, 1.2288, 0.5, s, 1e-12)
        b = kernels.solve_indemnity(x, 1.2288, 0.5, c, 1e-12)
        assert np.max(np.abs(a - b)) <= 1e-11

    def test_bracket_failure(self):
        c = CustomConvex(lambda y: 0.5 * y, lambda y: 0.5)
        with pytest.raises(BracketFailure):
            kernels.solve_indemnity(np.array([1.0]), 1.0, 1.0, c, 1e-12)
