"""Run configuration: strict JSON with fixed field names.

Example::

    {
      "model": {"family": "LogisticFeller",
                "params": {"kappa": 1, "gamma": 0, "K": 0, "beta": 1}},
      "analysis": {"tol": 1e-10, "domain_cap": 10000.0},
      "mc": {"seed": 1, "n_paths": 10000, "dt": 0.001, "horizon": 40.0},
      "excursion": {"epsilon": [0.4, 0.2, 0.1, 0.05]},
      "tree": {"x0": 1.0},
      "outputs": "out"
    }

Unknown fields anywhere are rejected.  ``mc.seed`` is mandatory.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .coeffs import CoefficientSet


class ConfigError(ValueError):
    """The configuration is malformed or violates an invariant."""


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown fields in {name}: {sorted(extra)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _number(name, v, positive=False, integer=False, allow_none=False):
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        raise ConfigError(f"{name} must be {'an integer' if integer else 'a number'}")
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{name} must be {'positive' if positive else 'finite'}")


@dataclass
class AnalysisConfig:
    tol: float = 1e-10
    domain_cap: Optional[float] = None

    def check(self):
        _number("analysis.tol", self.tol, positive=True)
        _number("analysis.domain_cap", self.domain_cap, positive=True, allow_none=True)


@dataclass
class MCConfig:
    seed: Optional[int] = None
    n_paths: int = 10000
    dt: float = 1e-3
    horizon: float = 40.0
    y0: float = 1.0
    workers: int = 1
    record: bool = False

    def check(self):
        if self.seed is None:
            raise ConfigError("mc.seed is required")
        _number("mc.seed", self.seed, integer=True)
        if self.seed < 0:
            raise ConfigError("mc.seed must be nonnegative")
        _number("mc.n_paths", self.n_paths, positive=True, integer=True)
        _number("mc.dt", self.dt, positive=True)
        _number("mc.horizon", self.horizon, positive=True)
        _number("mc.y0", self.y0)
        if self.y0 < 0:
            raise ConfigError("mc.y0 must be nonnegative")
        _number("mc.workers", self.workers, positive=True, integer=True)
        if not isinstance(self.record, bool):
            raise ConfigError("mc.record must be true or false")


@dataclass
class ExcursionConfig:
    epsilon: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    start_eps_factor: float = 1e-3
    retry_cap: int = 100

    def check(self):
        if not isinstance(self.epsilon, list) or not self.epsilon:
            raise ConfigError("excursion.epsilon must be a nonempty list")
        for e in self.epsilon:
            _number("excursion.epsilon", e, positive=True)
        if any(b >= a for a, b in zip(self.epsilon, self.epsilon[1:])):
            raise ConfigError("excursion.epsilon must be strictly decreasing")
        _number("excursion.start_eps_factor", self.start_eps_factor, positive=True)
        if self.start_eps_factor >= 1:
            raise ConfigError("excursion.start_eps_factor must be below 1")
        _number("excursion.retry_cap", self.retry_cap, positive=True, integer=True)


@dataclass
class TreeConfig:
    x0: float = 1.0
    node_cap: int = 1_000_000
    delta: Optional[float] = None
    n_trees: int = 1
    mass_cap: Optional[float] = None

    def check(self):
        _number("tree.x0", self.x0)
        if self.x0 < 0:
            raise ConfigError("tree.x0 must be nonnegative")
        _number("tree.node_cap", self.node_cap, positive=True, integer=True)
        _number("tree.delta", self.delta, positive=True, allow_none=True)
        _number("tree.n_trees", self.n_trees, positive=True, integer=True)
        _number("tree.mass_cap", self.mass_cap, positive=True, allow_none=True)


@dataclass
class RenewalConfig:
    f_csv: Optional[str] = None
    mu_csv: Optional[str] = None
    grid_dt: float = 0.01

    def check(self):
        if (self.f_csv is None) != (self.mu_csv is None):
            raise ConfigError("renewal.f_csv and renewal.mu_csv must be given together")
        _number("renewal.grid_dt", self.grid_dt, positive=True)


SECTIONS = {"analysis": AnalysisConfig, "mc": MCConfig, "excursion": ExcursionConfig,
            "tree": TreeConfig, "renewal": RenewalConfig}


@dataclass
class RunConfig:
    model: dict
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    excursion: ExcursionConfig = field(default_factory=ExcursionConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    renewal: RenewalConfig = field(default_factory=RenewalConfig)
    outputs: str = "out"

    @classmethod
    def from_dict(cls, data: dict, check: bool = True) -> "RunConfig":
        """Parse and validate; with ``check=False`` the invariants are left to :meth:`check`."""
        if not isinstance(data, dict):
            raise ConfigError("the configuration must be a JSON object")
        extra = set(data) - {"model", "outputs", *SECTIONS}
        if extra:
            raise ConfigError(f"unknown top-level fields: {sorted(extra)}")
        if "model" not in data:
            raise ConfigError("model is required")
        kw = {name: _section(sec, data.get(name, {}), name) for name, sec in SECTIONS.items()}
        outputs = data.get("outputs", "out")
        if not isinstance(outputs, str):
            raise ConfigError("outputs must be a path string")
        cfg = cls(model=data["model"], outputs=outputs, **kw)
        if check:
            cfg.check()
        return cfg

    @classmethod
    def from_json(cls, text: str, check: bool = True) -> "RunConfig":
        try:
            data = json.loads(text, parse_constant=_reject_constant)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data, check)

    def check(self):
        for name in SECTIONS:
            getattr(self, name).check()
        self.coefficients()

    def coefficients(self) -> CoefficientSet:
        spec = dict(self.model)
        if self.analysis.domain_cap is not None:
            spec["domain_cap"] = self.analysis.domain_cap
        try:
            return CoefficientSet.from_dict(spec)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"model: {exc}") from None

    def to_dict(self) -> dict:
        out = {"model": self.model, "outputs": self.outputs}
        out.update({name: asdict(getattr(self, name)) for name in SECTIONS})
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _reject_constant(name):
    raise ValueError(f"{name} is not allowed")
