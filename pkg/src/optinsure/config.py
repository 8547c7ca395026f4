"""Scenario configuration: JSON <-> typed objects, strict about unknown keys."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Union

from . import distributions, premium
from .distributions import QuadratureSpec
from .solver import M0Strategy, SolverConfig


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario files."""


def _check_keys(section: str, data: Any, cls) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {unknown}; allowed {sorted(allowed)}")
    return data


@dataclass
class SolverSection:
    m_tolerance: float = 1e-8
    max_iterations: int = 500
    root_tolerance: float = 1e-12
    m0: Union[str, float] = "lower"
    stopping: str = "extrapolated"
    quadrature: Dict[str, Any] = field(default_factory=dict)


@dataclass
class OutputSection:
    grid_points: int = 501
    x_max: Optional[float] = None


@dataclass
class VerifySection:
    trials: int = 200
    seed: int = 0
    grid_points: int = 2000
    foc_points: int = 1000
    foc_tolerance: float = 1e-8
    consistency_tolerance: float = 1e-7
    perturbation_tolerance: float = 1e-8
    curve_tolerance: float = 1e-5


@dataclass
class CompareSection:
    oracle: str = "auto"
    m_tolerance: float = 1e-6
    curve_tolerance: float = 1e-5
    grid_points: int = 500
    reference_m: Optional[float] = None
    reference_tolerance: float = 1e-4


@dataclass
class ScenarioConfig:
    name: str
    distribution: Dict[str, Any]
    premium: Dict[str, Any]
    gamma: float
    solver: SolverSection = field(default_factory=SolverSection)
    output: OutputSection = field(default_factory=OutputSection)
    verify: VerifySection = field(default_factory=VerifySection)
    compare: CompareSection = field(default_factory=CompareSection)
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        _check_keys("scenario", data, cls)
        for key in ("name", "distribution", "premium", "gamma"):
            if key not in data:
                raise ConfigError(f"scenario: missing required key {key!r}")
        sections = {}
        for name, sub in (("solver", SolverSection), ("output", OutputSection),
                          ("verify", VerifySection), ("compare", CompareSection)):
            raw = _check_keys(name, data.get(name, {}), sub)
            sections[name] = sub(**raw)
        if not isinstance(data["gamma"], (int, float)) or isinstance(data["gamma"], bool):
            raise ConfigError("gamma: expected a number")
        cfg = cls(
            name=str(data["name"]),
            distribution=dict(data["distribution"]),
            premium=dict(data["premium"]),
            gamma=float(data["gamma"]),
            output_dir=data.get("output_dir"),
            **sections,
        )
        # Build once so bad family parameters surface as config errors.
        try:
            cfg.loss()
            cfg.premium_fn()
            cfg.solver_config()
        except (ValueError, TypeError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["output_dir"] is None:
            del out["output_dir"]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def loss(self) -> distributions.LossDistribution:
        try:
            return distributions.from_dict(self.distribution)
        except ValueError as exc:
            raise ConfigError(f"distribution: {exc}") from exc

    def premium_fn(self) -> premium.PremiumFunction:
        try:
            return premium.from_dict(self.premium)
        except ValueError as exc:
            raise ConfigError(f"premium: {exc}") from exc

    def solver_config(self) -> SolverConfig:
        s = self.solver
        try:
            quad = QuadratureSpec.from_dict(s.quadrature)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"solver.quadrature: {exc}") from exc
        m0 = s.m0
        if isinstance(m0, str) and m0 in ("lower", "upper"):
            strategy, value = M0Strategy(m0), None
        else:
            try:
                value = float(m0)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"solver.m0: expected 'lower', 'upper' or a number, got {m0!r}") from exc
            strategy = M0Strategy.CUSTOM
        try:
            return SolverConfig(
                gamma=self.gamma, m_tolerance=float(s.m_tolerance), max_iterations=int(s.max_iterations),
                root_tolerance=float(s.root_tolerance), m0_strategy=strategy, m0_value=value,
                quadrature=quad, stopping=str(s.stopping),
            )
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from exc
