from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

HUBER_EPSILON_GRID: Tuple[float, ...] = tuple(float(e) for e in np.geomspace(1.1, 10.0, 10))
DEFAULT_RATIOS: Tuple[float, ...] = (0.0, 0.075, 0.15, 0.225, 0.30, 0.375, 0.45)
DEFAULT_SPLIT: Tuple[float, float, float] = (0.50, 0.15, 0.35)


class DefenseName(str, Enum):
    NONE = "none"
    TRIM = "trim"
    HUBER = "huber"
    SEVER = "sever"
    PRODA = "proda"
    BAYESCLEAN = "bayesclean"


class TrainSettings(BaseModel):
    """Inner training: full-batch SGD (or exact least squares for the linear model)."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    model: Literal["linear", "mlp"] = "linear"
    epochs: int = Field(40, ge=0)
    eta: float = Field(0.1, gt=0)
    lam: float = Field(0.0, ge=0, alias="lambda")
    solver: Literal["sgd", "lstsq"] = "sgd"
    init_seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _lstsq_is_linear(self) -> "TrainSettings":
        if self.solver == "lstsq" and self.model != "linear":
            raise ValueError("the lstsq solver only applies to the linear model")
        return self


class ExplicitDomain(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lower: List[float]
    upper: List[float]
    y_lower: float
    y_upper: float

    @model_validator(mode="after")
    def _ordered(self) -> "ExplicitDomain":
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)) or self.y_lower > self.y_upper:
            raise ValueError("every lower bound must not exceed its upper bound")
        return self


class AttackSettings(BaseModel):
    """Flat attack plan file: alpha, n_p, batch_size, t_out, gamma, inner_t, inner_eta, lambda, seed, domain."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    alpha: float = Field(1.0, ge=0.0, le=1.0)
    n_p: int = Field(0, ge=0)
    batch_size: int = Field(1, ge=1)
    t_out: int = Field(50, ge=0)
    gamma: float = Field(0.9, ge=0.0)
    inner_t: int = Field(40, ge=1)
    inner_eta: float = Field(0.1, gt=0)
    lam: float = Field(0.0, ge=0, alias="lambda")
    seed: int = Field(0, ge=0)
    domain: Union[Literal["data"], ExplicitDomain] = "data"
    model: Literal["linear", "mlp"] = "linear"
    normalize: bool = True
    inject: bool = False

    @property
    def n_batches(self) -> int:
        return -(-self.n_p // self.batch_size)

    def inner_train(self) -> TrainSettings:
        return TrainSettings(model=self.model, epochs=self.inner_t, eta=self.inner_eta, lam=self.lam)


class BayesCleanSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    c1: float = Field(0.5, ge=0)
    c2: float = Field(1.5, ge=0)
    lambda1: float = Field(1e-6, gt=0)
    lambda2: float = Field(1e-6, gt=0)
    beta1: float = Field(1e-6, gt=0)
    beta2: float = Field(1e-6, gt=0)
    t_em: int = Field(300, ge=1)
    # Defense path: compare |y − μ| with the bands. False selects the |y| vs |μ + cσ| rule.
    symmetric: bool = True

    @model_validator(mode="after")
    def _thresholds_ordered(self) -> "BayesCleanSettings":
        if self.c2 < self.c1:
            raise ValueError(f"c2 ({self.c2}) must be >= c1 ({self.c1})")
        return self

    @property
    def priors(self) -> Tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.beta1, self.beta2)


class DefenseSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reject_rate: float = Field(0.4, ge=0.0, lt=1.0)
    trim_max_iters: int = Field(50, ge=1)
    sever_rounds: int = Field(4, ge=1)
    huber_epsilons: Tuple[float, ...] = HUBER_EPSILON_GRID
    huber_lam: float = Field(1e-4, ge=0)
    huber_max_iters: int = Field(10_000, ge=1)
    huber_folds: int = Field(5, ge=2)
    proda_group_size: int = Field(5, ge=1)
    proda_eps: float = Field(1e-5, gt=0.0, lt=1.0)
    proda_worst_case: float = Field(0.45, ge=0.0, lt=1.0)
    proda_selection: Literal["subset", "full"] = "subset"
    proda_finite_population: bool = False
    bayesclean: BayesCleanSettings = Field(default_factory=BayesCleanSettings)

    @field_validator("huber_epsilons")
    @classmethod
    def _epsilons_above_one(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value:
            raise ValueError("the Huber epsilon grid must not be empty")
        if any(e <= 1.0 for e in value):
            raise ValueError("every Huber epsilon must exceed 1")
        return value


class ExperimentConfig(BaseModel):
    """One grid of (seed, alpha, ratio, defense) cells on a single dataset and model."""

    model_config = ConfigDict(extra="forbid")

    dataset: str = "synthetic"
    csv_path: Optional[Path] = None
    synthetic_n: Optional[int] = Field(None, ge=3)
    has_header: bool = True
    target_col: Optional[Union[int, str]] = None
    split: Tuple[float, float, float] = DEFAULT_SPLIT
    alphas: List[float] = Field(default_factory=lambda: [1.0])
    ratios: List[float] = Field(default_factory=lambda: list(DEFAULT_RATIOS))
    defenses: List[DefenseName] = Field(default_factory=lambda: [DefenseName.TRIM])
    repetitions: int = Field(10, ge=1)
    master_seed: int = Field(0, ge=0)
    attack: AttackSettings = Field(default_factory=AttackSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)
    defense: DefenseSettings = Field(default_factory=DefenseSettings)
    output_dir: Optional[Path] = None
    threads: Optional[int] = Field(None, ge=1)

    @field_validator("alphas")
    @classmethod
    def _alphas_in_unit_interval(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 <= a <= 1.0 for a in value):
            raise ValueError("alphas must be a non-empty list of values in [0, 1]")
        return value

    @field_validator("ratios")
    @classmethod
    def _ratios_in_range(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 <= r <= 0.45 for r in value):
            raise ValueError("ratios must be a non-empty list of values in [0, 0.45]")
        return sorted(value)

    @model_validator(mode="after")
    def _one_source(self) -> "ExperimentConfig":
        if (self.csv_path is None) == (self.synthetic_n is None):
            raise ValueError("set exactly one of csv_path and synthetic_n")
        if self.attack.model != self.train.model:
            raise ValueError(f"attack model {self.attack.model} differs from training model {self.train.model}")
        return self


class RecordStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"


class CellRecord(BaseModel):
    """Test NMSE of one (seed, alpha, ratio, defense) cell and its paired gain."""

    dataset: str
    model: str
    alpha: float
    ratio: float
    defense: DefenseName
    seed: int
    status: RecordStatus = RecordStatus.OK
    nmse: Optional[float] = None
    gain_pct: Optional[float] = None
    n_poison: int = 0
    poison_recall: Optional[float] = None
    error: Optional[str] = None


class CellSummary(BaseModel):
    dataset: str
    model: str
    alpha: float
    ratio: float
    defense: DefenseName
    mean_gain_pct: Optional[float] = None
    std_gain_pct: Optional[float] = None
    mean_nmse: Optional[float] = None
    mean_nmse_nodef: Optional[float] = None
    n_ok: int = 0
    n_failed: int = 0


class ExperimentReport(BaseModel):
    config: ExperimentConfig
    records: List[CellRecord]
    summary: List[CellSummary]

    @property
    def all_succeeded(self) -> bool:
        return all(r.status is RecordStatus.OK for r in self.records)


def _preset(t_out: int, inner_t: int, eta: float, batch: int, model: str) -> Tuple[AttackSettings, TrainSettings]:
    attack = AttackSettings(
        t_out=t_out, gamma=0.9, inner_t=inner_t, inner_eta=eta, batch_size=batch, model=model
    )
    return attack, TrainSettings(model=model, epochs=inner_t, eta=eta)


# (dataset, model) -> crafting settings and the settings used to train the attacked model.
PRESETS: Dict[Tuple[str, str], Tuple[AttackSettings, TrainSettings]] = {
    ("loan", "linear"): _preset(120, 30, 0.1, 252, "linear"),
    ("heart", "linear"): _preset(50, 40, 0.1, 120, "linear"),
    ("boston", "linear"): _preset(100, 40, 0.1, 19, "linear"),
    ("appliances", "linear"): _preset(50, 70, 0.2, 740, "linear"),
    ("loan", "mlp"): _preset(150, 90, 0.1, 252, "mlp"),
    ("heart", "mlp"): _preset(80, 100, 0.1, 120, "mlp"),
    ("synthetic", "linear"): _preset(50, 40, 0.1, 15, "linear"),
}


def preset(dataset: str, model: str) -> Tuple[AttackSettings, TrainSettings]:
    """Copies of the preset for ``(dataset, model)``; raises KeyError when there is none."""
    attack, train = PRESETS[(dataset.lower(), model)]
    return attack.model_copy(), train.model_copy()
