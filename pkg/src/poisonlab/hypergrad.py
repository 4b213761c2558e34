"""
Reverse-mode differentiation through the SGD trajectory.

Second-order products come from applying the R-operator (directional
derivative along v in parameter space) to the backprop pass: the R-image of
the parameter gradient is the Hessian-vector product, and the R-images of the
input and label gradients are the mixed products contracted with v. They are
exact for the piecewise-linear activations used here.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from poisonlab.datasets import Dataset
from poisonlab.errors import AttackError, HypergradientError, ModelError
from poisonlab.objective import detect_risk, detect_risk_grad
from poisonlab.regressors import (
    ModelParams,
    backward,
    Trajectory,
    leaky_relu_prime,
    mse_loss,
    sgd_train,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperGradient:
    """Gradient of the attacker objective w.r.t. the poisoning features and labels."""

    dX: np.ndarray
    dy: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dX.reshape(-1), self.dy.reshape(-1)])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float
    a_ref: float
    r_ref: float
    clean_params: ModelParams
    sigma: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise AttackError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.a_ref <= 0 or self.r_ref <= 0:
            raise AttackError(f"normalization references must be positive, got ({self.a_ref}, {self.r_ref})")


def _r_pass(params: ModelParams, data: Dataset, lam: float, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """R-operator of the backprop pass along ``v``: (H·v, R{∇_X L}, R{∇_y L})."""
    arch = params.arch
    v = np.asarray(v, dtype=float)
    if v.shape != (arch.n_params,):
        raise ModelError(f"direction of shape {v.shape}, expected ({arch.n_params},)")
    bp = backward(params, data, lam)
    weights = params.weights
    v_weights, v_biases = arch.split(v)
    slope = arch.negative_slope
    n = data.n

    r_inputs = [np.zeros_like(bp.inputs[0])]
    r_pre = []
    for l in range(arch.n_layers):
        rz = r_inputs[l] @ weights[l] + bp.inputs[l] @ v_weights[l] + v_biases[l]
        r_pre.append(rz)
        if l < arch.n_layers - 1:
            r_inputs.append(leaky_relu_prime(bp.pre[l], slope) * rz)

    hv_W = [np.empty(0)] * arch.n_layers
    hv_b = [np.empty(0)] * arch.n_layers
    r_delta = r_pre[-1] / n
    for l in reversed(range(arch.n_layers)):
        hv_W[l] = r_inputs[l].T @ bp.deltas[l] + bp.inputs[l].T @ r_delta + lam * v_weights[l]
        hv_b[l] = r_delta.sum(axis=0)
        r_upstream = r_delta @ weights[l].T + bp.deltas[l] @ v_weights[l].T
        if l > 0:
            r_delta = r_upstream * leaky_relu_prime(bp.pre[l - 1], slope)

    hv = ModelParams.from_layers(arch, hv_W, hv_b).vector
    return hv, r_upstream, -r_pre[-1][:, 0] / n


def _check_indices(poison_indices: Sequence[int], n: int) -> np.ndarray:
    idx = np.asarray(poison_indices, dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise AttackError(f"poisoning index out of range for a training set of {n} rows")
    return idx


def hvp_w(params: ModelParams, data: Dataset, lam: float, v: np.ndarray) -> np.ndarray:
    """Exact Hessian-vector product ∇²_w L(w)·v without forming the Hessian."""
    return _r_pass(params, data, lam, v)[0]


def mixed_hvp_xp(params: ModelParams, data: Dataset, lam: float, v: np.ndarray,
                 poison_indices: Sequence[int]) -> np.ndarray:
    """(∇_{X_p}∇_w L)ᵀ·v for the poisoning rows, shape b×m."""
    idx = _check_indices(poison_indices, data.n)
    return _r_pass(params, data, lam, v)[1][idx]


def mixed_hvp_yp(params: ModelParams, data: Dataset, lam: float, v: np.ndarray,
                 poison_indices: Sequence[int]) -> np.ndarray:
    """(∇_{y_p}∇_w L)ᵀ·v for the poisoning rows, shape b."""
    idx = _check_indices(poison_indices, data.n)
    return _r_pass(params, data, lam, v)[2][idx]


def objective_value(cfg: ObjectiveConfig, val: Dataset, final_params: ModelParams, poison: Dataset) -> float:
    """Normalized scalarized objective α·L(D_val, w)/A_ref − (1−α)·R(D_p)/R_ref."""
    value = cfg.alpha * mse_loss(final_params, val, 0.0) / cfg.a_ref
    if poison.n:
        value -= (1.0 - cfg.alpha) * detect_risk(poison, cfg.clean_params, cfg.sigma) / cfg.r_ref
    return value


def rmd_hypergrad(
    cfg: ObjectiveConfig,
    val: Dataset,
    train: Dataset,
    poison_indices: Sequence[int],
    w0: ModelParams,
    T: int,
    eta: float,
    lam: float = 0.0,
    trajectory: Optional[Trajectory] = None,
) -> Tuple[HyperGradient, float]:
    """
    Hypergradient of the normalized attacker objective by reverse-mode differentiation.

    The poisoning points are the rows ``poison_indices`` of ``train``. Training
    runs forward for T steps from ``w0``; the reverse loop then walks the stored
    trajectory backwards accumulating the feature and label hypergradients.
    A precomputed ``trajectory`` of ``sgd_train(w0, train, eta, T, lam)`` may be
    passed in; it is only read.

    Returns:
        (HyperGradient, objective value at w(T))
    """
    if T < 1:
        raise AttackError(f"reverse-mode differentiation needs T >= 1, got {T}")
    idx = _check_indices(poison_indices, train.n)
    poison = train.subset(idx)
    if trajectory is None:
        trajectory = sgd_train(w0, train, eta, T, lam)
    elif trajectory.T != T or len(trajectory) != T + 1 or trajectory.eta != eta:
        raise AttackError(f"trajectory of {trajectory.T} steps at rate {trajectory.eta} for T = {T}, eta = {eta}")
    final = trajectory.final

    val_bp = backward(final, val, 0.0)
    dw = (cfg.alpha / cfg.a_ref) * val_bp.grad
    value = cfg.alpha * val_bp.loss / cfg.a_ref

    dX = np.zeros((idx.size, train.m))
    dy = np.zeros(idx.size)
    if idx.size:
        risk, risk_dX, risk_dy = detect_risk_grad(poison, cfg.clean_params, cfg.sigma)
        scale = (1.0 - cfg.alpha) / cfg.r_ref
        dX = dX - scale * risk_dX
        dy = dy - scale * risk_dy
        value -= scale * risk

    for t in reversed(range(T)):
        hv, r_grad_X, r_grad_y = _r_pass(trajectory[t], train, lam, dw)
        dX = dX - eta * r_grad_X[idx]
        dy = dy - eta * r_grad_y[idx]
        dw = dw - eta * hv
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(dX)) and np.all(np.isfinite(dy))):
            raise HypergradientError(t)

    return HyperGradient(dX=dX, dy=dy), value


def fd_hypergrad(
    cfg: ObjectiveConfig,
    val: Dataset,
    train: Dataset,
    poison_indices: Sequence[int],
    w0: ModelParams,
    T: int,
    eta: float,
    lam: float = 0.0,
    h: float = 1e-4,
) -> HyperGradient:
    """Central-difference oracle for :func:`rmd_hypergrad`; retrains for every coordinate."""
    if h <= 0:
        raise AttackError(f"finite-difference step must be positive, got {h}")
    idx = _check_indices(poison_indices, train.n)

    def evaluate(candidate: Dataset) -> float:
        final = sgd_train(w0, candidate, eta, T, lam).final
        return objective_value(cfg, val, final, candidate.subset(idx))

    dX = np.zeros((idx.size, train.m))
    dy = np.zeros(idx.size)
    for k, row in enumerate(idx):
        for j in range(train.m):
            plus = train.X[row].copy()
            minus = train.X[row].copy()
            plus[j] += h
            minus[j] -= h
            f_plus = evaluate(train.replace_rows([row], plus[None, :], train.y[[row]]))
            f_minus = evaluate(train.replace_rows([row], minus[None, :], train.y[[row]]))
            dX[k, j] = (f_plus - f_minus) / (2.0 * h)
        f_plus = evaluate(train.replace_rows([row], train.X[[row]], train.y[[row]] + h))
        f_minus = evaluate(train.replace_rows([row], train.X[[row]], train.y[[row]] - h))
        dy[k] = (f_plus - f_minus) / (2.0 * h)
    return HyperGradient(dX=dX, dy=dy)
