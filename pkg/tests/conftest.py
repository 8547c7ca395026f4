import math

import pytest

from optinsure import (
    Exponential,
    ExpectedValue,
    MultiLayerStopLoss,
    Quadratic,
    SolverConfig,
    fixed_point_solve,
)

_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])


EXAMPLES = {
    1: (Exponential(1.0), ExpectedValue(1.0 / 3.0), 2.0),
    2: (Exponential(1.0), Quadratic(0.5), 2.0),
    3: (Exponential(1.0), MultiLayerStopLoss((0.1, 0.2), (1.0, 2.0)), 0.5),
}


@pytest.fixture(scope="session")
def solved_examples():
    """Schedule and trace for each worked example, solved once per session."""
    out = {}
    for key, (dist, g, gamma) in EXAMPLES.items():
        schedule, trace = fixed_point_solve(dist, g, SolverConfig(gamma))
        out[key] = (dist, g, gamma, schedule, trace)
    return out


LN2 = math.log(2.0)
