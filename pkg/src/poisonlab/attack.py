"""
Stealthy poisoning attack: projected hypergradient ascent on batches of cloned
training points, with the effectiveness and detectability terms normalized by
reference values so that neither dominates the scalarized objective.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from models.model import AttackSettings, ExplicitDomain
from poisonlab.datasets import Dataset
from poisonlab.errors import AttackError
from poisonlab.hypergrad import ObjectiveConfig, rmd_hypergrad
from poisonlab.objective import attacker_objective, detect_risk
from poisonlab.regressors import (
    Architecture,
    ModelParams,
    fit_model,
    init_params,
    mse_loss,
    residual_sigma,
)
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)

__all__ = [
    "AttackPlan",
    "AttackResult",
    "BatchRecord",
    "CleanReference",
    "FeasibleDomain",
    "NormalizationRefs",
    "attacker_objective",
    "compute_R_ref",
    "craft_attack",
    "detect_risk",
    "init_poison",
    "make_plan",
    "optimize_batch",
    "project",
]

LOG_EVERY = 10


@dataclass(frozen=True)
class FeasibleDomain:
    """Box constraints on the poisoning features and labels."""

    lower: np.ndarray
    upper: np.ndarray
    y_lower: float
    y_upper: float

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise AttackError(f"bound shapes differ: {lower.shape} vs {upper.shape}")
        if np.any(lower > upper) or self.y_lower > self.y_upper:
            raise AttackError("every lower bound must not exceed its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "y_lower", float(self.y_lower))
        object.__setattr__(self, "y_upper", float(self.y_upper))

    @classmethod
    def from_data(cls, data: Dataset) -> "FeasibleDomain":
        """Per-column [min, max] of the (standardized) clean training data."""
        if data.n == 0:
            raise AttackError("cannot derive a feasible domain from an empty dataset")
        return cls(data.X.min(axis=0), data.X.max(axis=0), data.y.min(), data.y.max())

    @classmethod
    def from_settings(cls, domain: Union[str, ExplicitDomain], data: Dataset) -> "FeasibleDomain":
        if isinstance(domain, ExplicitDomain):
            if len(domain.lower) != data.m:
                raise AttackError(f"explicit domain has {len(domain.lower)} feature bounds, data has {data.m}")
            return cls(np.array(domain.lower), np.array(domain.upper), domain.y_lower, domain.y_upper)
        if domain != "data":
            raise AttackError(f"unknown domain {domain!r}")
        return cls.from_data(data)

    def contains(self, X: np.ndarray, y: np.ndarray) -> bool:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        return bool(
            np.all(X >= self.lower) and np.all(X <= self.upper)
            and np.all(y >= self.y_lower) and np.all(y <= self.y_upper)
        )


@dataclass(frozen=True)
class NormalizationRefs:
    r_ref: float
    l_refs: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "l_refs", tuple(float(v) for v in self.l_refs))
        if not self.r_ref > 0 or any(not v > 0 for v in self.l_refs):
            raise AttackError(f"normalization references must be positive: R_ref={self.r_ref}, L_ref={self.l_refs}")

    @classmethod
    def unit(cls, n_batches: int) -> "NormalizationRefs":
        return cls(1.0, (1.0,) * n_batches)

    def l_ref(self, batch: int) -> float:
        if not 0 <= batch < len(self.l_refs):
            raise AttackError(f"no effectiveness reference for batch {batch}")
        return self.l_refs[batch]


@dataclass(frozen=True)
class CleanReference:
    """Model trained on the clean training set and its residual standard error."""

    params: ModelParams
    sigma: float

    @classmethod
    def fit(cls, train: Dataset, settings: AttackSettings) -> "CleanReference":
        params = fit_model(train, settings.inner_train())
        return cls(params=params, sigma=residual_sigma(params, train))


@dataclass(frozen=True)
class AttackPlan:
    settings: AttackSettings
    domain: FeasibleDomain
    batches: Tuple[np.ndarray, ...]
    clean: CleanReference

    @property
    def n_batches(self) -> int:
        return len(self.batches)

    @property
    def n_poison(self) -> int:
        return int(sum(b.size for b in self.batches))

    def with_alpha(self, alpha: float) -> "AttackPlan":
        return AttackPlan(
            settings=self.settings.model_copy(update={"alpha": alpha}),
            domain=self.domain,
            batches=self.batches,
            clean=self.clean,
        )

    def architecture(self, n_features: int) -> Architecture:
        return Architecture.for_kind(self.settings.model, n_features)


@dataclass(frozen=True)
class BatchRecord:
    """One optimized batch: where its points live and how the objective evolved."""

    batch: int
    indices: np.ndarray
    source_indices: np.ndarray
    X: np.ndarray
    y: np.ndarray
    l_ref: float
    risk: float
    objective_history: Tuple[float, ...] = field(repr=False)


@dataclass(frozen=True)
class AttackResult:
    """Crafted batches in order; any prefix of them is a valid smaller attack."""

    original: Dataset
    batches: Tuple[BatchRecord, ...]
    inject: bool
    r_ref: float

    @property
    def poisoned(self) -> Dataset:
        return self.snapshot(len(self.batches))

    @property
    def poison_indices(self) -> np.ndarray:
        return self.poison_indices_upto(len(self.batches))

    def poison_indices_upto(self, k: int) -> np.ndarray:
        self._check_k(k)
        if k == 0:
            return np.empty(0, dtype=int)
        return np.concatenate([b.indices for b in self.batches[:k]])

    def snapshot(self, k: int) -> Dataset:
        """Training set after the first ``k`` batches were fixed into it."""
        self._check_k(k)
        data = self.original
        for record in self.batches[:k]:
            if self.inject:
                data = data.append(record.X, record.y)
            else:
                data = data.replace_rows(record.indices, record.X, record.y)
        return data

    def is_poison(self, k: Optional[int] = None) -> np.ndarray:
        k = len(self.batches) if k is None else k
        mask = np.zeros(self.snapshot(k).n, dtype=bool)
        mask[self.poison_indices_upto(k)] = True
        return mask

    def ratio(self, k: Optional[int] = None) -> float:
        """Poisoning ratio n_p / n_tr, with n_tr the clean training size."""
        k = len(self.batches) if k is None else k
        return self.poison_indices_upto(k).size / self.original.n

    def _check_k(self, k: int) -> None:
        if not 0 <= k <= len(self.batches):
            raise AttackError(f"snapshot index {k} outside [0, {len(self.batches)}]")


def project(X_p: np.ndarray, y_p: np.ndarray, domain: FeasibleDomain) -> Tuple[np.ndarray, np.ndarray]:
    """Clip the poisoning features and labels into the feasible box."""
    X_p = np.asarray(X_p, dtype=float)
    if X_p.ndim != 2 or X_p.shape[1] != domain.lower.size:
        raise AttackError(f"poisoning features of shape {X_p.shape} for a domain over {domain.lower.size} features")
    return (
        np.clip(X_p, domain.lower, domain.upper),
        np.clip(np.asarray(y_p, dtype=float), domain.y_lower, domain.y_upper),
    )


def init_poison(
    train: Dataset, batch_size: int, seed: int, pool: Optional[Sequence[int]] = None
) -> Tuple[Dataset, np.ndarray]:
    """Clone ``batch_size`` rows drawn without replacement from ``pool`` (default: all rows)."""
    pool = np.arange(train.n) if pool is None else np.asarray(pool, dtype=int)
    if batch_size < 0:
        raise AttackError(f"batch size must be non-negative, got {batch_size}")
    if batch_size > pool.size:
        raise AttackError(f"batch size {batch_size} exceeds the remaining clean pool of {pool.size}")
    indices = np.random.default_rng(seed).choice(pool, size=batch_size, replace=False)
    return train.subset(indices), indices


def make_plan(
    settings: AttackSettings,
    train: Dataset,
    clean: Optional[CleanReference] = None,
    domain: Optional[FeasibleDomain] = None,
) -> AttackPlan:
    """
    Draw every batch of clean source rows up front.

    The budget is capped at the training-set size; batches have ``batch_size``
    rows except possibly the last one.
    """
    budget = min(settings.n_p, train.n)
    if budget < settings.n_p:
        logger.warning("poisoning budget %d capped to the %d available clean rows", settings.n_p, train.n)
    pool = np.arange(train.n)
    batches: List[np.ndarray] = []
    drawn = 0
    i = 0
    while drawn < budget:
        size = min(settings.batch_size, budget - drawn)
        _, indices = init_poison(train, size, derive_seed(settings.seed, "batch", i), pool)
        batches.append(indices)
        pool = np.setdiff1d(pool, indices)
        drawn += size
        i += 1
    return AttackPlan(
        settings=settings,
        domain=domain or FeasibleDomain.from_settings(settings.domain, train),
        batches=tuple(batches),
        clean=clean or CleanReference.fit(train, settings),
    )


def _initial_params(plan: AttackPlan, n_features: int) -> ModelParams:
    return init_params(plan.architecture(n_features), derive_seed(plan.settings.seed, "init"))


def _stage(current: Dataset, source: np.ndarray, inject: bool) -> Tuple[Dataset, np.ndarray]:
    """Place clones of ``source`` rows into the training set; return it and their positions."""
    if inject:
        staged = current.append(current.X[source], current.y[source])
        return staged, np.arange(current.n, staged.n)
    return current, source


def optimize_batch(
    plan: AttackPlan,
    refs: NormalizationRefs,
    val: Dataset,
    train: Dataset,
    poison0: Dataset,
    indices: Sequence[int],
    batch: int = 0,
) -> Tuple[Dataset, Tuple[float, ...]]:
    """
    Projected hypergradient ascent on one batch of poisoning points.

    ``poison0`` is written into ``train`` at ``indices`` and then refined for
    ``t_out`` hyperiterations. Each hyperiteration restarts the inner training
    from the same initial parameters.

    Returns:
        (optimized poisoning points, objective value at every hyperiteration)
    """
    s = plan.settings
    idx = np.asarray(indices, dtype=int)
    if poison0.n != idx.size:
        raise AttackError(f"{poison0.n} initial poisoning points for {idx.size} indices")
    cfg = ObjectiveConfig(
        alpha=s.alpha,
        a_ref=refs.l_ref(batch),
        r_ref=refs.r_ref,
        clean_params=plan.clean.params,
        sigma=plan.clean.sigma,
    )
    X_p, y_p = project(poison0.X, poison0.y, plan.domain)
    current = train.replace_rows(idx, X_p, y_p)
    w0 = _initial_params(plan, train.m)
    history: List[float] = []

    for it in range(s.t_out):
        hg, value = rmd_hypergrad(cfg, val, current, idx, w0, s.inner_t, s.inner_eta, s.lam)
        history.append(value)
        norm = hg.norm()
        if norm > 0:
            X_p = X_p + s.gamma * hg.dX / norm
            y_p = y_p + s.gamma * hg.dy / norm
        X_p, y_p = project(X_p, y_p, plan.domain)
        current = current.replace_rows(idx, X_p, y_p)
        if (it + 1) % LOG_EVERY == 0:
            logger.debug("batch %d hyperiteration %d/%d: objective %.6g", batch, it + 1, s.t_out, value)

    return Dataset(X=X_p, y=y_p, column_names=train.column_names), tuple(history)


def _run_batches(plan: AttackPlan, val: Dataset, train: Dataset, r_ref: float, normalize: bool) -> AttackResult:
    s = plan.settings
    inner = s.inner_train()
    current = train
    records: List[BatchRecord] = []
    l_refs: List[float] = []

    for i, source in enumerate(plan.batches):
        if normalize:
            trained = fit_model(current, inner)
            l_ref = mse_loss(trained, val, 0.0)
            if not l_ref > 0:
                raise AttackError(f"degenerate effectiveness reference for batch {i}: {l_ref}")
        else:
            l_ref = 1.0
        l_refs.append(l_ref)
        refs = NormalizationRefs(r_ref, tuple(l_refs))
        staged, positions = _stage(current, source, s.inject)
        poison, history = optimize_batch(plan, refs, val, staged, train.subset(source), positions, batch=i)
        current = staged.replace_rows(positions, poison.X, poison.y)
        risk = detect_risk(poison, plan.clean.params, plan.clean.sigma)
        records.append(
            BatchRecord(
                batch=i,
                indices=positions,
                source_indices=source,
                X=poison.X,
                y=poison.y,
                l_ref=l_ref,
                risk=risk,
                objective_history=history,
            )
        )
        logger.info("batch %d/%d fixed (%d points, risk %.4g)", i + 1, plan.n_batches, source.size, risk)

    return AttackResult(original=train, batches=tuple(records), inject=s.inject, r_ref=r_ref)


def compute_R_ref(plan: AttackPlan, val: Dataset, train: Dataset) -> float:
    """
    Detectability reference: run the batched attack at α = 1 with unit
    references and return the largest risk among the optimized batches.
    """
    if plan.n_batches == 0:
        raise AttackError("no poisoning batches to derive a detectability reference from")
    result = _run_batches(plan.with_alpha(1.0), val, train, r_ref=1.0, normalize=False)
    r_ref = max(record.risk for record in result.batches)
    if not (np.isfinite(r_ref) and r_ref > 0):
        raise AttackError(f"degenerate detectability reference: {r_ref}")
    return float(r_ref)


def craft_attack(plan: AttackPlan, R_ref: float, val: Dataset, train: Dataset) -> AttackResult:
    """
    Craft every batch in sequence against the partially poisoned training set.

    Each batch gets its own effectiveness reference, the validation loss of the
    model trained on the training set as it stood before that batch. With
    normalization off both references are 1.
    """
    normalize = plan.settings.normalize
    if normalize and not R_ref > 0:
        raise AttackError(f"R_ref must be positive, got {R_ref}")
    return _run_batches(plan, val, train, r_ref=R_ref if normalize else 1.0, normalize=normalize)
