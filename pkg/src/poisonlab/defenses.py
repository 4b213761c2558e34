"""
Training-time defenses: TRIM, Huber regression, SEVER and Proda.

Every defense leaves its input untouched and reports which training rows it
kept, which it rejected, and the model it finally trained.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import huber

from models.model import HUBER_EPSILON_GRID, TrainSettings
from poisonlab.datasets import Dataset
from poisonlab.errors import DefenseError
from poisonlab.regressors import (
    Architecture,
    ModelParams,
    fit_lstsq,
    fit_model,
    forward,
    mse_loss,
    per_sample_grads,
)
from utils.seeding import derive_rng

logger = logging.getLogger(__name__)

MIN_KEPT = 2


@dataclass(frozen=True)
class DefenseReport:
    """Kept/rejected partition of the training rows plus the defended model."""

    name: str
    n: int
    kept_indices: np.ndarray
    rejected_indices: np.ndarray
    final_params: ModelParams
    iterations: int
    diagnostics: Tuple[float, ...] = ()
    extras: Dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        kept = np.sort(np.asarray(self.kept_indices, dtype=int))
        rejected = np.sort(np.asarray(self.rejected_indices, dtype=int))
        if np.intersect1d(kept, rejected).size:
            raise DefenseError(f"{self.name}: kept and rejected sets overlap")
        if not np.array_equal(np.union1d(kept, rejected), np.arange(self.n)):
            raise DefenseError(f"{self.name}: kept and rejected sets do not cover the {self.n} training rows")
        object.__setattr__(self, "kept_indices", kept)
        object.__setattr__(self, "rejected_indices", rejected)
        object.__setattr__(self, "diagnostics", tuple(float(d) for d in self.diagnostics))

    @classmethod
    def from_kept(cls, name: str, n: int, kept: Sequence[int], params: ModelParams, **kwargs: Any) -> "DefenseReport":
        kept = np.asarray(kept, dtype=int)
        return cls(name=name, n=n, kept_indices=kept, rejected_indices=np.setdiff1d(np.arange(n), kept),
                   final_params=params, **kwargs)

    def rejected_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.rejected_indices] = True
        return mask


def keep_count(n: int, reject_rate: float) -> int:
    """⌈(1 − reject_rate)·n⌉, robust to floating-point noise in the product."""
    if not 0.0 <= reject_rate < 1.0:
        raise DefenseError(f"reject rate must lie in [0, 1), got {reject_rate}")
    return int(math.ceil(round((1.0 - reject_rate) * n, 9)))


def _lowest_residuals(params: ModelParams, data: Dataset, k: int) -> np.ndarray:
    r = forward(params, data.X) - data.y
    return np.sort(np.argsort(r * r, kind="stable")[:k])


def no_defense(data: Dataset, train_cfg: TrainSettings) -> DefenseReport:
    """Plain fit on every row, reported in the same shape as a defense."""
    params = fit_model(data, train_cfg)
    return DefenseReport.from_kept("none", data.n, np.arange(data.n), params, iterations=1,
                                   diagnostics=(mse_loss(params, data, train_cfg.lam),))


def trim(data: Dataset, reject_rate: float, train_cfg: TrainSettings, max_iters: int = 50) -> DefenseReport:
    """
    Alternate between fitting on the current subset and re-selecting the
    ⌈(1 − reject_rate)·n⌉ rows with the lowest squared residuals.

    Every fit starts from the same initialization. Stops when the subset repeats
    or after ``max_iters`` fits. ``diagnostics`` holds the subset loss of every
    fit, which never increases when the inner fits are exact.
    """
    k = keep_count(data.n, reject_rate)
    if k < MIN_KEPT:
        raise DefenseError(f"TRIM would keep {k} points, need at least {MIN_KEPT}")
    if max_iters < 1:
        raise DefenseError(f"max_iters must be at least 1, got {max_iters}")

    subset = _lowest_residuals(fit_model(data, train_cfg), data, k)
    losses: List[float] = []
    converged = False
    for it in range(1, max_iters + 1):
        kept = data.subset(subset)
        params = fit_model(kept, train_cfg)
        losses.append(mse_loss(params, kept, train_cfg.lam))
        reselected = _lowest_residuals(params, data, k)
        if np.array_equal(reselected, subset):
            converged = True
            break
        subset = reselected
    else:
        params = fit_model(data.subset(subset), train_cfg)
        logger.warning("TRIM did not settle within %d iterations", max_iters)

    logger.debug("TRIM kept %d/%d points after %d iterations", k, data.n, it)
    return DefenseReport.from_kept("trim", data.n, subset, params, iterations=it, diagnostics=losses,
                                   extras={"converged": converged})


@dataclass(frozen=True)
class HuberFit:
    params: ModelParams
    epsilon: float
    converged: bool
    scale: float = 1.0
    cv_mse: Tuple[float, ...] = ()


def _huber_objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, epsilon: float, lam: float):
    """Huber loss with a jointly estimated scale σ, plus λ‖w‖²; returns value and gradient."""
    m = X.shape[1]
    w, b, sigma = theta[:m], theta[m], theta[m + 1]
    r = y - X @ w - b
    z = r / sigma
    psi = np.clip(z, -epsilon, epsilon)
    h = huber(epsilon, z)
    value = sigma * (y.size + 2.0 * h.sum()) + lam * (w @ w)
    grad = np.empty_like(theta)
    grad[:m] = -2.0 * X.T @ psi + 2.0 * lam * w
    grad[m] = -2.0 * psi.sum()
    grad[m + 1] = y.size + np.sum(2.0 * h - 2.0 * psi * z)
    return value, grad


def _fit_huber_single(data: Dataset, epsilon: float, lam: float, max_iters: int) -> HuberFit:
    theta0 = np.zeros(data.m + 2)
    theta0[-1] = 1.0
    bounds = [(None, None)] * (data.m + 1) + [(np.finfo(float).eps * 10, None)]
    result = minimize(
        _huber_objective,
        theta0,
        args=(data.X, data.y, epsilon, lam),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iters},
    )
    if not result.success:
        logger.warning("Huber fit (epsilon=%.3g) stopped early: %s", epsilon, result.message)
    params = ModelParams(Architecture.linear(data.m), result.x[: data.m + 1])
    return HuberFit(params=params, epsilon=epsilon, converged=bool(result.success), scale=float(result.x[-1]))


def huber_fit(
    data: Dataset,
    epsilon_grid: Sequence[float] = HUBER_EPSILON_GRID,
    lam_h: float = 1e-4,
    max_iters: int = 10_000,
    folds: int = 5,
    seed: int = 0,
) -> HuberFit:
    """
    Linear Huber regression with ε picked by k-fold cross-validated MSE.

    Raises:
        DefenseError: Empty grid, an ε not above 1, or fewer rows than folds.
    """
    grid = [float(e) for e in epsilon_grid]
    if not grid:
        raise DefenseError("the Huber epsilon grid is empty")
    if any(e <= 1.0 for e in grid):
        raise DefenseError(f"every Huber epsilon must exceed 1, got {grid}")
    if data.n < folds:
        raise DefenseError(f"{data.n} rows cannot be split into {folds} folds")

    fold_ids = np.array_split(derive_rng(seed, "huber-cv").permutation(data.n), folds)
    scores: List[float] = []
    for epsilon in grid:
        errors = []
        for held in fold_ids:
            fit_on = data.subset(np.setdiff1d(np.arange(data.n), held))
            fold_fit = _fit_huber_single(fit_on, epsilon, lam_h, max_iters)
            r = forward(fold_fit.params, data.X[held]) - data.y[held]
            errors.append(float(r @ r) / held.size)
        scores.append(float(np.mean(errors)))

    best = grid[int(np.argmin(scores))]
    final = _fit_huber_single(data, best, lam_h, max_iters)
    logger.debug("Huber picked epsilon=%.3g (cv mse %.4g)", best, min(scores))
    return HuberFit(params=final.params, epsilon=best, converged=final.converged, scale=final.scale,
                    cv_mse=tuple(scores))


def huber_defense(
    data: Dataset,
    epsilon_grid: Sequence[float] = HUBER_EPSILON_GRID,
    lam_h: float = 1e-4,
    max_iters: int = 10_000,
    folds: int = 5,
    seed: int = 0,
) -> DefenseReport:
    """Huber fit on all rows; rows with |residual| > ε·σ are reported as rejected outliers."""
    fit = huber_fit(data, epsilon_grid, lam_h, max_iters, folds, seed)
    r = data.y - forward(fit.params, data.X)
    kept = np.flatnonzero(np.abs(r) <= fit.epsilon * fit.scale)
    return DefenseReport.from_kept(
        "huber", data.n, kept, fit.params, iterations=1, diagnostics=fit.cv_mse,
        extras={"epsilon": fit.epsilon, "scale": fit.scale, "converged": fit.converged},
    )


@dataclass(frozen=True)
class SeverRound:
    active: np.ndarray
    scores: np.ndarray
    removed: np.ndarray


def sever(data: Dataset, reject_rate: float, rounds: int, train_cfg: TrainSettings) -> DefenseReport:
    """
    Filter by outlier scores of the per-point gradients.

    Each round fits on the active rows, centers their per-point gradients,
    scores every row by its squared projection on the top right-singular
    vector and drops the highest scores. The removal budget is spread evenly
    over the rounds.
    """
    if rounds < 1:
        raise DefenseError(f"SEVER needs at least one round, got {rounds}")
    total = data.n - keep_count(data.n, reject_rate)
    schedule = np.diff(np.round(np.linspace(0, total, rounds + 1)).astype(int))

    active = np.arange(data.n)
    history: List[SeverRound] = []
    losses: List[float] = []
    for count in schedule:
        if active.size - count < MIN_KEPT:
            raise DefenseError(f"SEVER exhausted the active set ({active.size} rows left)")
        current = data.subset(active)
        params = fit_model(current, train_cfg)
        losses.append(mse_loss(params, current, train_cfg.lam))
        grads = per_sample_grads(params, current)
        centered = grads - grads.mean(axis=0)
        v = np.linalg.svd(centered, full_matrices=False)[2][0]
        scores = (centered @ v) ** 2
        order = np.argsort(-scores, kind="stable")
        removed = active[np.sort(order[:count])]
        history.append(SeverRound(active=active, scores=scores, removed=removed))
        active = np.setdiff1d(active, removed)

    params = fit_model(data.subset(active), train_cfg)
    return DefenseReport.from_kept("sever", data.n, active, params, iterations=rounds, diagnostics=losses,
                                   extras={"rounds": tuple(history)})


def proda_group_count(p: float, group_size: int, eps: float, n_total: Optional[int] = None) -> int:
    """
    Number of random groups needed so that, with probability at least 1 − ε,
    one of them contains only clean points when a fraction ``p`` is poisoned.

    Without ``n_total`` the groups are treated as draws with replacement,
    β = ⌈ln ε / ln(1 − (1−p)^γ)⌉. With ``n_total`` the all-clean probability of
    a group drawn without replacement from ⌊(1−p)·n⌋ clean rows is used.
    """
    if group_size < 1:
        raise DefenseError(f"group size must be at least 1, got {group_size}")
    if not 0.0 < eps < 1.0:
        raise DefenseError(f"eps must lie in (0, 1), got {eps}")
    if not 0.0 <= p < 1.0:
        raise DefenseError(f"degenerate group count: worst-case ratio must lie in [0, 1), got {p}")

    if n_total is None:
        clean_prob = (1.0 - p) ** group_size
    else:
        if n_total < group_size:
            raise DefenseError(f"groups of {group_size} cannot be drawn from {n_total} rows")
        n_clean = math.floor(round((1.0 - p) * n_total, 9))
        clean_prob = math.prod((n_clean - j) / (n_total - j) for j in range(group_size))
    if clean_prob <= 0.0:
        raise DefenseError(f"degenerate group count: no all-clean group of {group_size} is possible")
    if clean_prob >= 1.0:
        return 1
    return int(math.ceil(math.log(eps) / math.log1p(-clean_prob)))


def proda(
    data: Dataset,
    group_size: int,
    eps: float,
    reject_rate: float,
    worst_case_ratio: float,
    train_cfg: TrainSettings,
    seed: int = 0,
    selection: Literal["subset", "full"] = "subset",
    finite_population: bool = False,
) -> DefenseReport:
    """
    Fit a linear model on each random group, keep the rows it explains best,
    refit on them, and return the refit with the lowest MSE.

    ``selection`` picks where that MSE is measured: on the refit's own kept
    rows (default) or on the whole training set. The group count uses the
    with-replacement bound unless ``finite_population`` sizes it for draws
    without replacement from the ``data.n`` training rows.
    """
    if selection not in ("subset", "full"):
        raise DefenseError(f"unknown Proda selection {selection!r}")
    n_groups = proda_group_count(worst_case_ratio, group_size, eps, n_total=data.n if finite_population else None)
    k = keep_count(data.n, reject_rate)
    if k < MIN_KEPT:
        raise DefenseError(f"Proda would keep {k} points, need at least {MIN_KEPT}")

    best: Optional[Tuple[float, np.ndarray, ModelParams]] = None
    scores: List[float] = []
    for g in range(n_groups):
        group = derive_rng(seed, "proda", g).choice(data.n, size=group_size, replace=False)
        seed_model = fit_lstsq(data.subset(group))
        subset = _lowest_residuals(seed_model, data, k)
        selected = data.subset(subset)
        params = fit_model(selected, train_cfg)
        score = mse_loss(params, selected if selection == "subset" else data, 0.0)
        scores.append(score)
        if best is None or score < best[0]:
            best = (score, subset, params)

    logger.debug("Proda evaluated %d groups, best score %.4g", n_groups, best[0])
    return DefenseReport.from_kept("proda", data.n, best[1], best[2], iterations=n_groups, diagnostics=scores,
                                   extras={"n_groups": n_groups})
