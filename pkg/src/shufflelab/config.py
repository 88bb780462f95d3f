"""Experiment configuration.

Configs are YAML files with nested sections ``problem``, ``oracle``,
``strategy`` (or a ``strategies`` list), ``engine``, ``seeds``,
``lr_grid``, ``sweep`` and ``output``.  Everything is validated up front
and unknown keys are rejected, so a typo fails before any run starts.

The same models validate service request bodies; the CLI and the HTTP
API therefore accept identical configuration trees.
"""

from __future__ import annotations

import math
from typing import Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .engine import EngineSchedule, TargetSpec
from .oracle import GradientOracle, NoiseSpec
from .orders import StrategySpec
from .problems import (
    make_band_quadratic,
    make_sameclass_classification,
    make_signed_example,
)

DEFAULT_LR_GRID = tuple(1.1 * 2.0**-j for j in range(1, 21))
DEFAULT_SEEDS = (1, 2, 3)


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending keys."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SignedExampleConfig(_Strict):
    kind: Literal["signed_example"]
    N: int
    sigma: float

    def build(self):
        return make_signed_example(self.N, self.sigma)


class BandQuadraticConfig(_Strict):
    kind: Literal["band_quadratic"]
    d: int
    lam: float = Field(alias="lambda")
    sigma_top: float
    sigma_low: float
    m: int

    def build(self):
        return make_band_quadratic(self.d, self.lam, self.sigma_top, self.sigma_low, self.m)


class SameclassConfig(_Strict):
    kind: Literal["sameclass_classification"]
    classes: int
    per_class: int
    dim: int
    batch_size: int
    seed: int = 0
    separation: float = 4.0
    batching: Literal["sameclass", "standard"] = "sameclass"
    redraw_per_epoch: bool = False
    label_noise: float = Field(default=0.0, ge=0.0, lt=1.0)

    def build(self):
        return make_sameclass_classification(
            self.classes, self.per_class, self.dim, self.batch_size, self.seed,
            separation=self.separation, batching=self.batching,
            redraw_per_epoch=self.redraw_per_epoch, label_noise=self.label_noise,
        )


ProblemConfig = Union[SignedExampleConfig, BandQuadraticConfig, SameclassConfig]


class OracleConfig(_Strict):
    mode: Literal["exact", "gaussian", "internal_sgd"] = "exact"
    zeta: float = 0.0
    P: float = 0.0

    def build(self, problem) -> GradientOracle:
        return GradientOracle(problem, self.mode, NoiseSpec(zeta=self.zeta, P=self.P))


class StrategyConfig(_Strict):
    kind: str
    K: int | None = None
    update_every: int = 1
    n: int | None = None
    fixed_permutation: list[int] | None = None

    @model_validator(mode="after")
    def _cross_check(self):
        self.to_spec()  # kind/parameter compatibility lives in one place
        return self

    def to_spec(self) -> StrategySpec:
        fp = tuple(self.fixed_permutation) if self.fixed_permutation is not None else None
        return StrategySpec(
            kind=self.kind, K=self.K, update_every=self.update_every,
            n=self.n, fixed_permutation=fp,
        )


class TargetConfig(_Strict):
    metric: Literal["param_norm", "grad_norm_sq", "f_gap"]
    threshold: float

    def to_spec(self) -> TargetSpec:
        return TargetSpec(metric=self.metric, threshold=self.threshold)


class EngineConfig(_Strict):
    gamma: float
    epochs: int
    decay_epochs: list[int] = []
    decay_factor: float = 1.0
    target: TargetConfig | None = None
    steps_cap: int | None = None
    measure_sigma_star: bool = False
    x0: float | list[float] | None = None  # scalar broadcasts; None picks a per-problem default

    @model_validator(mode="after")
    def _cross_check(self):
        self.to_schedule()
        return self

    def to_schedule(self, gamma: float | None = None) -> EngineSchedule:
        return EngineSchedule(
            gamma=self.gamma if gamma is None else gamma,
            epochs=self.epochs,
            decay_epochs=tuple(self.decay_epochs),
            decay_factor=self.decay_factor,
            target=self.target.to_spec() if self.target is not None else None,
            steps_cap=self.steps_cap,
            measure_sigma_star=self.measure_sigma_star,
        )


class SweepConfig(_Strict):
    sigma_top_grid: list[float] = [0.0, 1.0, 10.0, 100.0]
    m_grid: list[int] = [4, 8, 16, 64]
    K_values: list[int] = [1]
    d: int = 20
    lam: float = Field(default=0.2, alias="lambda")
    sigma_low: float = 10.0
    target_norm: float = 0.2
    steps_cap: int = 10**7

    @model_validator(mode="after")
    def _ranges(self):
        if not self.sigma_top_grid or not self.m_grid or not self.K_values:
            raise ValueError("sweep grids must be non-empty")
        if any(m <= 0 or m % 2 for m in self.m_grid):
            raise ValueError("m grid entries must be even and positive")
        for K in self.K_values:
            bad = [m for m in self.m_grid if m % K]
            if bad:
                raise ValueError(f"K={K} does not divide m grid entries {bad}")
        if self.target_norm <= 0 or self.steps_cap < 1:
            raise ValueError("target_norm must be positive and steps_cap at least 1")
        return self


class OutputConfig(_Strict):
    dir: str = "."


class ExperimentConfig(_Strict):
    problem: ProblemConfig | None = Field(default=None, discriminator="kind")
    oracle: OracleConfig = OracleConfig()
    strategy: StrategyConfig | None = None
    strategies: list[StrategyConfig] | None = None
    engine: EngineConfig | None = None
    seeds: list[int] = list(DEFAULT_SEEDS)
    lr_grid: list[float] | None = None
    sweep: SweepConfig | None = None
    output: OutputConfig = OutputConfig()
    workers: int | None = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.strategy is not None and self.strategies is not None:
            raise ValueError("give either 'strategy' or 'strategies', not both")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.lr_grid is not None and (
            not self.lr_grid or any(not (0 < g) or not math.isfinite(g) for g in self.lr_grid)
        ):
            raise ValueError("lr_grid entries must be positive and finite")
        return self


def _format_validation_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "invalid configuration: " + "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping of sections")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_validation_error(err)) from err


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"could not parse {path}: {err}") from err
    if data is None:
        data = {}
    return parse_config(data)


def runnable_problem(problem, oracle_cfg: OracleConfig):
    """The flat problem a run operates on.

    Two-level problems flatten to their N*m low-level components except
    under the internal-SGD oracle, which samples low components itself
    and therefore works on the two-level object directly.
    """
    if hasattr(problem, "flatten") and oracle_cfg.mode != "internal_sgd":
        return problem.flatten()
    return problem


def build_run_pieces(cfg: ExperimentConfig):
    """(problem, oracle, strategy spec, schedule) for a single-run config."""
    if cfg.problem is None:
        raise ConfigError("a 'problem' section is required")
    if cfg.engine is None:
        raise ConfigError("an 'engine' section is required")
    if cfg.strategy is None:
        raise ConfigError("a 'strategy' section is required")
    base = cfg.problem.build()
    problem = runnable_problem(base, cfg.oracle)
    if cfg.oracle.mode == "internal_sgd" and not hasattr(base, "low_grad"):
        raise ConfigError("oracle mode internal_sgd requires a two-level problem")
    oracle = cfg.oracle.build(problem)
    return problem, oracle, cfg.strategy.to_spec(), cfg.engine.to_schedule()
