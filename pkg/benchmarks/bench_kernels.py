"""Compiled root finder vs the numpy fallback.

Times the indemnity kernel on a dense loss grid and a full fixed-point solve
for each worked example.  Run with ``python benchmarks/bench_kernels.py``.
"""
import argparse
import timeit
from unittest import mock

import numpy as np

from optinsure import kernels
from optinsure.distributions import Exponential
from optinsure.premium import ExpectedValue, MultiLayerStopLoss, Quadratic
from optinsure.solver import SolverConfig, fixed_point_solve

CASES = {
    "example1": (ExpectedValue(1.0 / 3.0), 2.0, 3.0),
    "example2": (Quadratic(0.5), 2.0, 5.4214),
    "example3": (MultiLayerStopLoss((0.1, 0.2), (1.0, 2.0)), 0.5, 1.2288),
}


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_kernel(points, repeat):
    x = np.linspace(0.0, 20.0, points)
    rows = []
    for name, (g, gamma, m) in CASES.items():
        params = g.kernel_params()
        py = best_of(lambda: kernels.python_indemnity(x, m, gamma, g.family_code, params, 1e-12), repeat, 3)
        c = best_of(lambda: kernels.compiled_indemnity(x, m, gamma, g.family_code, params, 1e-12), repeat, 3)
        rows.append((f"kernel {name} ({points} pts)", py, c))
    return rows


def bench_solve(repeat):
    rows = []
    for name, (g, gamma, _) in CASES.items():
        cfg = SolverConfig(gamma)
        c = best_of(lambda: fixed_point_solve(Exponential(1.0), g, cfg), repeat, 1)
        with mock.patch.object(kernels, "_builtin", kernels.python_indemnity):
            py = best_of(lambda: fixed_point_solve(Exponential(1.0), g, cfg), repeat, 1)
        rows.append((f"solve {name}", py, c))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels.compiled_indemnity is None:
        parser.exit(1, "compiled extension not built; run: pip install -e . --no-build-isolation\n")
    rows = bench_kernel(args.points, args.repeat) + bench_solve(args.repeat)
    print(f"{'case':32s} {'numpy [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for label, py, c in rows:
        print(f"{label:32s} {py * 1e3:12.2f} {c * 1e3:14.2f} {py / c:8.1f}x")


if __name__ == "__main__":
    main()
