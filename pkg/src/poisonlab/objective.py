"""
Attacker objective pieces shared by the hypergradient engine and the attack.

The detectability risk is the product of the poisoning points' MSE against
the clean model with its output bias shifted up and down by σ.
"""

from typing import Tuple

import numpy as np

from poisonlab.datasets import Dataset
from poisonlab.errors import AttackError
from poisonlab.regressors import ModelParams, backward, mse_loss


def _check_risk_inputs(poison: Dataset, sigma: float) -> None:
    if poison.n == 0:
        raise AttackError("detectability risk of an empty poisoning batch is undefined")
    if sigma < 0:
        raise AttackError(f"sigma must be non-negative, got {sigma}")


def detect_risk(poison: Dataset, clean_params: ModelParams, sigma: float) -> float:
    """R = L(D_p, w_cl+) · L(D_p, w_cl−), unregularized MSE with factor 1/(2b)."""
    _check_risk_inputs(poison, sigma)
    upper = mse_loss(clean_params.shift_output_bias(sigma), poison, 0.0)
    lower = mse_loss(clean_params.shift_output_bias(-sigma), poison, 0.0)
    return upper * lower


def detect_risk_grad(poison: Dataset, clean_params: ModelParams, sigma: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Risk value and its gradients w.r.t. the poisoning features and labels."""
    _check_risk_inputs(poison, sigma)
    upper = backward(clean_params.shift_output_bias(sigma), poison, 0.0)
    lower = backward(clean_params.shift_output_bias(-sigma), poison, 0.0)
    dX = lower.loss * upper.grad_X + upper.loss * lower.grad_X
    dy = lower.loss * upper.grad_y + upper.loss * lower.grad_y
    return upper.loss * lower.loss, dX, dy


def attacker_objective(alpha: float, l_norm: float, r_norm: float) -> float:
    """Scalarized objective α·L_norm − (1−α)·R_norm."""
    if not 0.0 <= alpha <= 1.0:
        raise AttackError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * l_norm - (1.0 - alpha) * r_norm
