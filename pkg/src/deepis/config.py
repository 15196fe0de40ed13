"""Experiment configuration: YAML with nested sections, validated into
dataclasses, hashed for provenance."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .ftt import CrossOptions

__all__ = [
    "ConfigError",
    "ProblemConfig",
    "ScheduleConfig",
    "CrossConfig",
    "EstimatorConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_hash",
]

_PROBLEM_KINDS = ("disk", "annulus", "sir", "toy_gaussian")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "disk"
    # annulus / disk
    r_outer_sq: float = 1e-4
    r_inner_sq: float = 0.0
    center: tuple[float, float] = (0.4, 0.4)
    # sir
    compartments: int = 1
    i_max: float = 80.0
    data_seed: int = 0
    adjacency_file: str | None = None
    data_file: str | None = None
    prior_lower: float = 0.0
    prior_upper: float = 2.0
    ode_tol: float = 1e-6
    # toy gaussian
    y_obs: float = 1.0
    sigma: float = 1.0
    threshold: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in _PROBLEM_KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}; pick one of {_PROBLEM_KINDS}")
        if self.kind in ("disk", "annulus"):
            if not 0.0 <= self.r_inner_sq < self.r_outer_sq:
                raise ConfigError("need 0 <= r_inner_sq < r_outer_sq")
        if self.kind == "sir":
            if self.compartments < 1:
                raise ConfigError("need at least one compartment")
            if not self.prior_upper > self.prior_lower:
                raise ConfigError("prior bounds must be increasing")


@dataclass(frozen=True)
class ScheduleConfig:
    gamma_init: float = 1e-3
    gamma_star: float = 1e5
    gamma_factor: float = math.sqrt(10.0)
    alpha_init: float = 1e-4
    alpha_factor: float = 10.0 ** (1.0 / 3.0)
    gamma_proportional: bool = True  # gamma_l = beta_l * gamma_star (posterior)

    def __post_init__(self) -> None:
        if self.gamma_init <= 0 or self.gamma_star < self.gamma_init:
            raise ConfigError("need 0 < gamma_init <= gamma_star")
        if not 0 < self.alpha_init <= 1:
            raise ConfigError("need 0 < alpha_init <= 1")
        if self.gamma_factor <= 1 or self.alpha_factor <= 1:
            raise ConfigError("ladder factors must exceed 1")


@dataclass(frozen=True)
class CrossConfig:
    grid_size: int = 17
    max_rank: int = 2
    initial_rank: int = 0  # 0: start at max_rank (no ramp)
    rank_increment: int = 2
    sweeps: int = 1
    tolerance: float = 1e-3
    validation_size: int = 16
    offgrid_validation: bool = False
    reference: str = "uniform"
    half_width: float = 3.0

    def __post_init__(self) -> None:
        if self.grid_size < 2:
            raise ConfigError("grid_size must be at least 2")
        if self.reference not in ("uniform", "truncated_normal"):
            raise ConfigError("reference must be uniform or truncated_normal")
        try:
            self.cross_options()
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def cross_options(self) -> CrossOptions:
        init = self.initial_rank if self.initial_rank >= 1 else self.max_rank
        return CrossOptions(
            max_rank=self.max_rank,
            rank_increment=self.rank_increment,
            sweeps=self.sweeps,
            tolerance=self.tolerance,
            initial_rank=min(init, self.max_rank),
            validation_size=self.validation_size,
            offgrid_validation=self.offgrid_validation,
        )


@dataclass(frozen=True)
class EstimatorConfig:
    n_samples: int = 65536
    replicates: int = 10
    coupling_a: float = 1.0
    seed: int = 7
    hellinger: bool = True
    compare_cross_entropy: bool = False
    ce_n_per_iter: int = 100_000
    ce_components: int = 1

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ConfigError("need at least one replicate")
        if self.n_samples < 2:
            raise ConfigError("need at least two samples")
        if not -1.0 <= self.coupling_a <= 1.0:
            raise ConfigError("coupling coefficient must lie in [-1, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    cross: CrossConfig = field(default_factory=CrossConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    output: str = "out"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["problem"]["center"] = list(d["problem"]["center"])
        return d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        est = {**asdict(self.estimator), "seed": int(seed)}
        return ExperimentConfig(
            self.problem, self.schedule, self.cross, EstimatorConfig(**est), self.output
        )


def _build_section(cls, data: dict, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    if "center" in data and data["center"] is not None:
        data = {**data, "center": tuple(float(v) for v in data["center"])}
    try:
        return cls(**data)
    except TypeError as err:
        raise ConfigError(f"bad section {name!r}: {err}") from err


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - {"problem", "schedule", "cross", "estimator", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    return ExperimentConfig(
        problem=_build_section(ProblemConfig, data.get("problem", {}), "problem"),
        schedule=_build_section(ScheduleConfig, data.get("schedule", {}), "schedule"),
        cross=_build_section(CrossConfig, data.get("cross", {}), "cross"),
        estimator=_build_section(EstimatorConfig, data.get("estimator", {}), "estimator"),
        output=str(data.get("output", "out")),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"invalid YAML: {err}") from err
    return parse_config(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)


def config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
