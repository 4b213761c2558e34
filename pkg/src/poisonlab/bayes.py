"""
Bayesian linear regression with evidence-approximation EM, and the BayesClean
filter that partitions training points by their position within the
predictive distribution.

Posterior quantities are computed from one SVD of the design matrix; the
right-singular basis is completed to a full basis when n < d.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from models.model import BayesCleanSettings, TrainSettings
from poisonlab.datasets import Dataset
from poisonlab.defenses import MIN_KEPT, DefenseReport
from poisonlab.errors import BayesError, DefenseError
from poisonlab.regressors import fit_model

logger = logging.getLogger(__name__)

DEFAULT_PRIORS = (1e-6, 1e-6, 1e-6, 1e-6)
EM_TOL = 1e-6

ZONE_ACCEPT = "accept"
ZONE_FLAG = "flag"
ZONE_REJECT = "reject"


@dataclass(frozen=True)
class PosteriorState:
    """Gaussian weight posterior N(mu, cov) under precisions (lam, beta)."""

    mu: np.ndarray
    cov: np.ndarray
    lam: float
    beta: float
    gamma: np.ndarray
    iterations: int = 0
    converged: bool = False
    history: Tuple[float, ...] = ()

    @property
    def noise_variance(self) -> float:
        return 1.0 / self.beta


@dataclass(frozen=True)
class _Spectrum:
    """SVD pieces of X reused across EM iterations."""

    V: np.ndarray
    s2: np.ndarray
    s_uty: np.ndarray
    n: int
    d: int

    @classmethod
    def of(cls, X: np.ndarray, y: np.ndarray) -> "_Spectrum":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise BayesError(f"design of shape {X.shape} with {y.size} targets")
        n, d = X.shape
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        k = s.size
        if k < d:
            Vt = np.vstack([Vt, null_space(Vt).T])
        s2 = np.concatenate([s * s, np.zeros(d - k)])
        s_uty = np.concatenate([s * (U.T @ y), np.zeros(d - k)])
        return cls(V=Vt.T, s2=s2, s_uty=s_uty, n=n, d=d)

    def solve(self, lam: float, beta: float) -> Tuple[np.ndarray, np.ndarray]:
        inv = 1.0 / (beta * self.s2 + lam)
        cov = (self.V * inv) @ self.V.T
        cov = 0.5 * (cov + cov.T)
        mu = self.V @ (beta * inv * self.s_uty)
        return mu, cov


def _check_precisions(lam: float, beta: float) -> None:
    if not (lam > 0 and beta > 0 and math.isfinite(lam) and math.isfinite(beta)):
        raise BayesError(f"precisions must be positive and finite, got lam={lam}, beta={beta}")


def posterior(X: np.ndarray, y: np.ndarray, lam: float, beta: float) -> PosteriorState:
    """Σ = (βXᵀX + λI)⁻¹ and μ = βΣXᵀy, evaluated through the SVD of X."""
    _check_precisions(lam, beta)
    spectrum = _Spectrum.of(X, y)
    mu, cov = spectrum.solve(lam, beta)
    return PosteriorState(mu=mu, cov=cov, lam=lam, beta=beta, gamma=1.0 - lam * np.diag(cov))


def _log_evidence(spectrum: _Spectrum, X: np.ndarray, y: np.ndarray, lam: float, beta: float) -> float:
    mu, _ = spectrum.solve(lam, beta)
    r = y - X @ mu
    return float(
        0.5 * spectrum.d * math.log(lam)
        + 0.5 * spectrum.n * math.log(beta)
        - 0.5 * beta * (r @ r)
        - 0.5 * lam * (mu @ mu)
        - 0.5 * np.sum(np.log(beta * spectrum.s2 + lam))
        - 0.5 * spectrum.n * math.log(2.0 * math.pi)
    )


def _log_prior(lam: float, beta: float, priors: Sequence[float]) -> float:
    l1, l2, b1, b2 = priors
    return l1 * math.log(lam) - l2 * lam + b1 * math.log(beta) - b2 * beta


def log_evidence(X: np.ndarray, y: np.ndarray, lam: float, beta: float) -> float:
    """log p(y | X, λ, β) of the Gaussian linear model with an isotropic weight prior."""
    _check_precisions(lam, beta)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    return _log_evidence(_Spectrum.of(X, y), X, y, lam, beta)


def evidence_objective(X: np.ndarray, y: np.ndarray, lam: float, beta: float,
                       priors: Sequence[float] = DEFAULT_PRIORS) -> float:
    """Log evidence plus the Gamma log-priors on λ and β; the quantity EM maximizes."""
    return log_evidence(X, y, lam, beta) + _log_prior(lam, beta, priors)


def _check_priors(priors: Sequence[float]) -> Tuple[float, float, float, float]:
    if len(priors) != 4 or any(not p > 0 for p in priors):
        raise BayesError(f"priors must be four positive values (lambda1, lambda2, beta1, beta2), got {priors}")
    return tuple(float(p) for p in priors)


def em_fit(
    X: np.ndarray,
    y: np.ndarray,
    priors: Sequence[float] = DEFAULT_PRIORS,
    T_EM: int = 300,
    tol: float = EM_TOL,
) -> PosteriorState:
    """
    Learn (λ, β) by maximizing log evidence + log priors.

    Each iteration tries the fixed-point update γⱼ = 1 − λΣⱼⱼ,
    λ = (Σγ + 2λ₁)/(‖μ‖² + 2λ₂), β⁻¹ = (‖y − Xμ‖² + 2β₂)/(n − Σγ + 2β₁), and falls
    back to the expectation-maximization step whenever the fixed point would
    lower the objective. Stops after ``T_EM`` iterations or once both
    precisions change by less than ``tol`` (relative).

    Raises:
        BayesError: Invalid priors or iteration count, or a non-finite update.
    """
    l1, l2, b1, b2 = _check_priors(priors)
    if T_EM < 1:
        raise BayesError(f"T_EM must be at least 1, got {T_EM}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    spectrum = _Spectrum.of(X, y)
    n, d = spectrum.n, spectrum.d

    lam = 1.0
    var_y = float(np.var(y))
    beta = 1.0 / var_y if var_y > 0 else 1.0

    def objective(lam_: float, beta_: float) -> float:
        return _log_evidence(spectrum, X, y, lam_, beta_) + _log_prior(lam_, beta_, (l1, l2, b1, b2))

    current = objective(lam, beta)
    history = [current]
    converged = False
    it = 0
    for it in range(1, T_EM + 1):
        mu, cov = spectrum.solve(lam, beta)
        r = y - X @ mu
        rr = float(r @ r)
        mm = float(mu @ mu)
        gamma_sum = d - lam * float(np.trace(cov))

        lam_new = (gamma_sum + 2.0 * l1) / (mm + 2.0 * l2)
        beta_new = (n - gamma_sum + 2.0 * b1) / (rr + 2.0 * b2)
        candidate = objective(lam_new, beta_new) if lam_new > 0 and beta_new > 0 else -math.inf
        if not candidate >= current:
            trace_xtx_cov = float(np.sum(spectrum.s2 / (beta * spectrum.s2 + lam)))
            lam_new = (d + 2.0 * l1) / (mm + float(np.trace(cov)) + 2.0 * l2)
            beta_new = (n + 2.0 * b1) / (rr + trace_xtx_cov + 2.0 * b2)
            candidate = objective(lam_new, beta_new)
        if not (math.isfinite(lam_new) and math.isfinite(beta_new) and math.isfinite(candidate)):
            raise BayesError(f"non-finite hyperparameters at EM iteration {it}")
        if candidate < current:
            converged = True
            break

        change = max(abs(lam_new - lam) / lam, abs(beta_new - beta) / beta)
        lam, beta, current = lam_new, beta_new, candidate
        history.append(current)
        if change < tol:
            converged = True
            break

    mu, cov = spectrum.solve(lam, beta)
    logger.debug("EM stopped after %d iterations: lambda=%.4g beta=%.4g", it, lam, beta)
    return PosteriorState(
        mu=mu,
        cov=cov,
        lam=lam,
        beta=beta,
        gamma=1.0 - lam * np.diag(cov),
        iterations=it,
        converged=converged,
        history=tuple(history),
    )


def predictive(x_star: np.ndarray, state: PosteriorState) -> Tuple[np.ndarray, np.ndarray]:
    """Predictive mean μ* = μᵀx* and variance σ*² = β⁻¹ + x*ᵀΣx*, for one point or a matrix of rows."""
    x = np.asarray(x_star, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != state.mu.size:
        raise BayesError(f"input with {x.shape[1]} features for a posterior over {state.mu.size} weights")
    mean = x @ state.mu
    quad = np.einsum("ij,jk,ik->i", x, state.cov, x)
    var = state.noise_variance + np.maximum(quad, 0.0)
    if single:
        return mean[0], var[0]
    return mean, var


def classify_zones(
    y: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    c1: float,
    c2: float,
    symmetric: bool = False,
) -> np.ndarray:
    """
    Zone of every point: accept if |y| ≤ |μ + c₁σ|, else flag if |y| ≤ |μ + c₂σ|,
    else reject. The symmetric rule compares |y − μ| with c₁σ and c₂σ instead.
    """
    if not 0 <= c1 <= c2:
        raise BayesError(f"thresholds must satisfy 0 <= c1 <= c2, got c1={c1}, c2={c2}")
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if symmetric:
        dev = np.abs(y - mu)
        inner, outer = dev <= c1 * sigma, dev <= c2 * sigma
    else:
        size = np.abs(y)
        inner, outer = size <= np.abs(mu + c1 * sigma), size <= np.abs(mu + c2 * sigma)
    zones = np.full(y.shape, ZONE_REJECT, dtype=object)
    zones[outer] = ZONE_FLAG
    zones[inner] = ZONE_ACCEPT
    return zones


@dataclass(frozen=True)
class CleanPartition:
    accept: np.ndarray
    flag: np.ndarray
    reject: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    zones: np.ndarray
    state: PosteriorState

    @property
    def rejected(self) -> np.ndarray:
        """Flagged and rejected points; both are dropped downstream."""
        return np.union1d(self.flag, self.reject)


def design_with_bias(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.column_stack([X, np.ones(X.shape[0])])


def bayesclean(
    data: Dataset,
    c1: float = 0.5,
    c2: float = 1.5,
    priors: Sequence[float] = DEFAULT_PRIORS,
    T_EM: int = 300,
    symmetric: bool = False,
    fit_intercept: bool = True,
) -> CleanPartition:
    """Fit the Bayesian linear model on ``data`` and split its points into accept/flag/reject zones."""
    if not 0 <= c1 <= c2:
        raise BayesError(f"thresholds must satisfy 0 <= c1 <= c2, got c1={c1}, c2={c2}")
    X = design_with_bias(data.X) if fit_intercept else data.X
    state = em_fit(X, data.y, priors, T_EM)
    mu, var = predictive(X, state)
    sigma = np.sqrt(var)
    zones = classify_zones(data.y, mu, sigma, c1, c2, symmetric)
    return CleanPartition(
        accept=np.flatnonzero(zones == ZONE_ACCEPT),
        flag=np.flatnonzero(zones == ZONE_FLAG),
        reject=np.flatnonzero(zones == ZONE_REJECT),
        mu=mu,
        sigma=sigma,
        zones=zones,
        state=state,
    )


def bayesclean_defense(
    data: Dataset,
    settings: Optional[BayesCleanSettings] = None,
    train_cfg: Optional[TrainSettings] = None,
) -> DefenseReport:
    """BayesClean as a defense: keep the accepted points and refit the pipeline's model on them."""
    settings = settings or BayesCleanSettings()
    train_cfg = train_cfg or TrainSettings()
    partition = bayesclean(data, settings.c1, settings.c2, settings.priors, settings.t_em, settings.symmetric)
    if partition.accept.size < MIN_KEPT:
        raise DefenseError(f"BayesClean accepted only {partition.accept.size} points")
    params = fit_model(data.subset(partition.accept), train_cfg)
    logger.debug(
        "BayesClean zones: %d accept, %d flag, %d reject",
        partition.accept.size, partition.flag.size, partition.reject.size,
    )
    return DefenseReport.from_kept(
        "bayesclean", data.n, partition.accept, params, iterations=partition.state.iterations,
        diagnostics=partition.state.history,
        extras={"partition": partition, "lam": partition.state.lam, "beta": partition.state.beta},
    )
