"""Command-line front end: solve, verify and compare scenarios.

Artifacts are plain files so runs can be diffed: JSON with sorted keys and
CSV with 17 significant digits.  Wall time goes to stderr, never into an
artifact, so repeated runs are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig
from .distributions import Exponential
from .errors import (
    DivergentMoment,
    InvalidPremium,
    NoConvergence,
    NoRoot,
    QuadratureBudgetExceeded,
)
from .oracles import oracle_deductible, oracle_multilayer, oracle_quadratic, perturbation_test
from .premium import ExpectedValue, MultiLayerStopLoss, Quadratic
from .solver import (
    check_comonotone,
    first_order_residuals,
    fixed_point_solve,
    objective,
)

log = logging.getLogger("optinsure")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_QUADRATURE = 4
EXIT_NO_ORACLE = 5
EXIT_COMONOTONE = 6
EXIT_FIRST_ORDER = 7
EXIT_CONSISTENCY = 8
EXIT_PERTURBATION = 9
EXIT_ORACLE_DELTA = 10

EXIT_CODES_HELP = """exit codes:
  0   success / every check passed
  2   configuration error (malformed JSON, unknown keys, bad parameters)
  3   fixed-point iteration did not converge
  4   quadrature failure or divergent moment
  5   compare: no closed-form oracle for this scenario
  6   verify: comonotonicity / admissibility check failed
  7   verify: first-order condition residual too large
  8   verify: self-consistency of M or fixed-point residual failed
  9   verify: a perturbation improved the objective
  10  verify/compare: solver and oracle disagree beyond tolerance
"""

ENV_OUTPUT_ROOT = "OPTINSURE_OUT"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_curve(path: Path, x, indemnity) -> None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(indemnity, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "indemnity", "retained"])
    for xi, yi in zip(x, y):
        w.writerow([_fmt(xi), _fmt(yi), _fmt(xi - yi)])
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_curve(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([float(r["indemnity"]) for r in rows])
    return x, y


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _output_dir(args, cfg: ScenarioConfig) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg.output_dir:
        out = Path(cfg.output_dir)
    else:
        out = Path(os.environ.get(ENV_OUTPUT_ROOT, "runs")) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "m0", None) is not None:
        m0 = args.m0
        if m0 not in ("lower", "upper"):
            try:
                m0 = float(m0)
            except ValueError as exc:
                raise ConfigError(f"--m0: expected lower, upper or a number, got {args.m0!r}") from exc
        cfg.solver.m0 = m0
    if getattr(args, "tol", None) is not None:
        cfg.solver.m_tolerance = args.tol
    if getattr(args, "seed", None) is not None:
        cfg.verify.seed = args.seed
    cfg.solver_config()
    return cfg


def _curve_xmax(cfg: ScenarioConfig, dist, schedule) -> float:
    if cfg.output.x_max is not None:
        return float(cfg.output.x_max)
    if dist.is_discrete:
        return float(dist.support_upper)
    top = dist.quantile(0.999)
    return max(top, max(schedule.breakpoints) * 1.25)


def _solve(cfg: ScenarioConfig):
    dist, g, scfg = cfg.loss(), cfg.premium_fn(), cfg.solver_config()
    schedule, trace = fixed_point_solve(dist, g, scfg)
    return dist, g, scfg, schedule, trace


def _report(cfg, dist, g, scfg, schedule, trace) -> Dict:
    obj = objective(schedule, dist, g, scfg)
    return {
        "scenario": cfg.to_dict(),
        "m_star": schedule.m_star,
        "deductible": schedule.deductible,
        "iterations": len(trace.iterations),
        "converged": trace.converged,
        "direction": trace.direction,
        "fixed_point_residual": trace.fixed_point_residual,
        "quadrature_error": trace.quadrature_error,
        "derivative_moment": trace.derivative_moment,
        "extended_family": g.extended,
        "objective": obj.to_dict(),
        "version": __version__,
    }


def cmd_solve(args) -> int:
    cfg = _apply_overrides(ScenarioConfig.load(args.config), args)
    out = _output_dir(args, cfg)
    t0 = time.perf_counter()
    dist, g, scfg, schedule, trace = _solve(cfg)
    x = schedule.grid(_curve_xmax(cfg, dist, schedule), cfg.output.grid_points)
    write_curve(out / "indemnity.csv", x, schedule(x))
    write_json(out / "trace.json", trace.to_dict())
    write_json(out / "report.json", _report(cfg, dist, g, scfg, schedule, trace))
    log.info("solve %s: M*=%.12g d=%.12g in %d iterations (%.3fs)", cfg.name, schedule.m_star,
             schedule.deductible, len(trace.iterations), time.perf_counter() - t0)
    return EXIT_OK


def _oracle_for(cfg: ScenarioConfig, dist, g):
    """Closed-form oracle matching the scenario, or None."""
    if not isinstance(dist, Exponential):
        return None
    want = cfg.compare.oracle
    lam, gamma = dist.rate, cfg.gamma
    if isinstance(g, ExpectedValue) and want in ("auto", "deductible"):
        return oracle_deductible(gamma, lam, g.theta)
    if isinstance(g, Quadratic) and want in ("auto", "quadratic"):
        return oracle_quadratic(gamma, lam, g.alpha)
    if isinstance(g, MultiLayerStopLoss) and want in ("auto", "multilayer"):
        return oracle_multilayer(gamma, lam, g.loadings, g.thresholds)
    return None


def _check(name: str, passed: bool, exit_code: int, **values) -> Dict:
    return {"name": name, "passed": bool(passed), "exit_code": exit_code, **values}


def cmd_verify(args) -> int:
    cfg = _apply_overrides(ScenarioConfig.load(args.config), args)
    out = _output_dir(args, cfg)
    v = cfg.verify
    dist, g, scfg, schedule, trace = _solve(cfg)
    checks: List[Dict] = []

    top = dist.support_upper if dist.is_discrete else dist.quantile(1.0 - 1e-6)
    grid = schedule.grid(top, v.grid_points)
    como = check_comonotone(schedule, grid)
    checks.append(_check("comonotone", como.ok, EXIT_COMONOTONE, detail=como.violation or ""))
    vals = np.asarray(schedule(grid))
    pos = grid > 0.0
    checks.append(_check("no_full_insurance", bool(np.all(vals[pos] < grid[pos])), EXIT_COMONOTONE))

    curve_path = out / "indemnity.csv"
    if curve_path.exists():
        cx, cy = read_curve(curve_path)
        admissible = bool(np.all(cy >= -1e-10) and np.all(cy <= cx + 1e-10))
        if np.any(np.diff(cx) < 0.0):
            checks.append(_check("curve_comonotone", False, EXIT_COMONOTONE, detail="x column not sorted"))
        else:
            cres = check_comonotone(cy, cx, schedule.deductible, schedule.plateau_levels)
            checks.append(_check("curve_comonotone", cres.ok and admissible, EXIT_COMONOTONE,
                                 detail=cres.violation or ("" if admissible else "curve leaves [0, x]"),
                                 source=str(curve_path.name)))
        checks.append(_check("curve_matches_solver",
                             float(np.max(np.abs(cy - schedule(cx)))) <= v.curve_tolerance,
                             EXIT_COMONOTONE, max_delta=float(np.max(np.abs(cy - schedule(cx))))))

    foc_grid = np.linspace(schedule.deductible, max(top, schedule.deductible + 1.0), v.foc_points + 1)[1:]
    if dist.is_discrete:
        foc_grid = dist.xs[dist.xs > schedule.deductible]
    foc = first_order_residuals(schedule, foc_grid)
    checks.append(_check("first_order", foc.max_abs_kappa <= v.foc_tolerance and foc.plateau_violations == 0,
                         EXIT_FIRST_ORDER, max_abs_kappa=foc.max_abs_kappa,
                         plateau_points=foc.plateau_points, plateau_violations=foc.plateau_violations))

    obj = objective(schedule, dist, g, scfg)
    consistency = abs(obj.retained_moment - schedule.m_star)
    checks.append(_check("self_consistency", consistency <= v.consistency_tolerance, EXIT_CONSISTENCY,
                         delta=consistency))
    checks.append(_check("fixed_point_residual",
                         trace.fixed_point_residual <= scfg.m_tolerance + trace.quadrature_error + 1e-12,
                         EXIT_CONSISTENCY, residual=trace.fixed_point_residual))

    pert = perturbation_test(schedule, dist, g, scfg.gamma, trials=v.trials, seed=v.seed,
                             spec=scfg.quadrature, tolerance=v.perturbation_tolerance)
    checks.append(_check("perturbation", pert.passed, EXIT_PERTURBATION, **pert.to_dict()))

    oracle = _oracle_for(cfg, dist, g)
    if oracle is not None:
        ox = schedule.grid(_curve_xmax(cfg, dist, schedule), cfg.compare.grid_points)
        delta = float(np.max(np.abs(schedule(ox) - oracle(ox))))
        checks.append(_check("oracle_curve", delta <= v.curve_tolerance, EXIT_ORACLE_DELTA, max_delta=delta))

    failed = [c for c in checks if not c["passed"]]
    write_json(out / "verify.json", {"scenario": cfg.name, "m_star": schedule.m_star,
                                     "checks": checks, "passed": not failed})
    for c in checks:
        log.info("%-22s %s", c["name"], "PASS" if c["passed"] else "FAIL")
    return failed[0]["exit_code"] if failed else EXIT_OK


def cmd_compare(args) -> int:
    cfg = _apply_overrides(ScenarioConfig.load(args.config), args)
    out = _output_dir(args, cfg)
    dist, g = cfg.loss(), cfg.premium_fn()
    oracle = _oracle_for(cfg, dist, g)
    if oracle is None:
        log.error("no closed-form oracle for %s with %s", type(dist).__name__, type(g).__name__)
        return EXIT_NO_ORACLE
    _, _, scfg, schedule, trace = _solve(cfg)
    c = cfg.compare
    x = schedule.grid(_curve_xmax(cfg, dist, schedule), c.grid_points)
    ys, yo = schedule(x), oracle(x)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "solver", "oracle", "delta"])
    for row in zip(x, ys, yo, ys - yo):
        w.writerow([_fmt(v) for v in row])
    (out / "compare.csv").write_text(buf.getvalue(), encoding="utf-8")
    write_curve(out / "oracle_indemnity.csv", x, yo)
    dm = abs(schedule.m_star - oracle.m)
    dc = float(np.max(np.abs(ys - yo)))
    summary = {
        "scenario": cfg.name,
        "oracle": oracle.family,
        "m_star": schedule.m_star,
        "m_oracle": oracle.m,
        "m_delta": dm,
        "deductible": schedule.deductible,
        "deductible_oracle": oracle.deductible,
        "curve_max_delta": dc,
        "iterations": len(trace.iterations),
        "m_tolerance": c.m_tolerance,
        "curve_tolerance": c.curve_tolerance,
    }
    passed = dm <= c.m_tolerance and dc <= c.curve_tolerance
    if c.reference_m is not None:
        summary["reference_m"] = c.reference_m
        summary["reference_delta"] = abs(schedule.m_star - c.reference_m)
        passed = passed and summary["reference_delta"] <= c.reference_tolerance
    summary["passed"] = passed
    write_json(out / "compare.json", summary)
    log.info("compare %s: |dM|=%.3e max|dI|=%.3e -> %s", cfg.name, dm, dc, "PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_ORACLE_DELTA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optinsure",
        description="Optimal indemnity under exponential utility and convex premium functionals.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (("solve", cmd_solve, "run the fixed-point iteration and write artifacts"),
                           ("verify", cmd_verify, "solve and run the invariant suite"),
                           ("compare", cmd_compare, "solve and diff against the closed-form oracle")):
        p = sub.add_parser(name, help=text, epilog=EXIT_CODES_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", help=f"output directory (default ${ENV_OUTPUT_ROOT}/<name> or runs/<name>)")
        p.add_argument("--m0", help="initial M: lower, upper or a number >= 1")
        p.add_argument("--tol", type=float, help="stopping tolerance on |M_n - M_{n-1}|")
        p.add_argument("--seed", type=int, help="seed for perturbation trials")
        p.set_defaults(func=fn)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, InvalidPremium) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (QuadratureBudgetExceeded, DivergentMoment) as exc:
        print(f"quadrature failure: {exc}", file=sys.stderr)
        return EXIT_QUADRATURE
    except NoRoot as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_NO_ORACLE


if __name__ == "__main__":
    sys.exit(main())
