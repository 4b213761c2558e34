"""
Linear regressor and fixed-shape MLP with exact gradients and full-batch SGD.

Parameters are stored as one flat vector; layer ``l`` occupies its weight
matrix (fan_in × fan_out, row-major) followed by its bias vector. The linear
model is the single-layer case of the same network.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple, Union

import numpy as np

from models.model import TrainSettings
from poisonlab.datasets import Dataset
from poisonlab.errors import DivergenceError, ModelError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
MLP_HIDDEN = (32, 8)
MLP_BIAS_INIT = 1e-2


class ModelKind(str, Enum):
    LINEAR = "linear"
    MLP = "mlp"


@dataclass(frozen=True)
class Architecture:
    kind: ModelKind
    layer_widths: Tuple[int, ...]
    negative_slope: float = LEAKY_SLOPE

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ModelKind(self.kind))
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ModelError(f"invalid layer widths {widths}")
        if widths[-1] != 1:
            raise ModelError(f"output width must be 1, got {widths[-1]}")
        if self.kind is ModelKind.LINEAR and len(widths) != 2:
            raise ModelError(f"a linear model has no hidden layers, got widths {widths}")

    @classmethod
    def linear(cls, n_features: int) -> "Architecture":
        return cls(ModelKind.LINEAR, (n_features, 1))

    @classmethod
    def mlp(cls, n_features: int, hidden: Tuple[int, ...] = MLP_HIDDEN) -> "Architecture":
        return cls(ModelKind.MLP, (n_features, *hidden, 1))

    @classmethod
    def for_kind(cls, kind: Union[str, ModelKind], n_features: int) -> "Architecture":
        if ModelKind(kind) is ModelKind.LINEAR:
            return cls.linear(n_features)
        return cls.mlp(n_features)

    @property
    def n_features(self) -> int:
        return self.layer_widths[0]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        return list(zip(self.layer_widths[:-1], self.layer_widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def split(self, vector: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Views of ``vector`` as per-layer weight matrices and bias vectors."""
        if vector.shape != (self.n_params,):
            raise ModelError(f"parameter vector of shape {vector.shape}, expected ({self.n_params},)")
        weights, biases = [], []
        offset = 0
        for fan_in, fan_out in self.layer_shapes:
            weights.append(vector[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            biases.append(vector[offset:offset + fan_out])
            offset += fan_out
        return weights, biases

    def weight_mask(self) -> np.ndarray:
        """1 for weight entries, 0 for bias entries of the flat layout."""
        mask = np.zeros(self.n_params)
        offset = 0
        for fan_in, fan_out in self.layer_shapes:
            mask[offset:offset + fan_in * fan_out] = 1.0
            offset += fan_in * fan_out + fan_out
        return mask

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "layer_widths": list(self.layer_widths),
            "negative_slope": self.negative_slope,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Architecture":
        return cls(
            ModelKind(data["kind"]),
            tuple(data["layer_widths"]),
            float(data.get("negative_slope", LEAKY_SLOPE)),
        )


@dataclass(frozen=True)
class ModelParams:
    arch: Architecture
    vector: np.ndarray

    def __post_init__(self) -> None:
        vector = np.array(self.vector, dtype=float).reshape(-1)
        if vector.shape != (self.arch.n_params,):
            raise ModelError(f"{vector.size} parameters for an architecture needing {self.arch.n_params}")
        vector.flags.writeable = False
        object.__setattr__(self, "vector", vector)

    @classmethod
    def from_layers(cls, arch: Architecture, weights: List[np.ndarray], biases: List[np.ndarray]) -> "ModelParams":
        parts = []
        for W, b in zip(weights, biases):
            parts.append(np.asarray(W, dtype=float).reshape(-1))
            parts.append(np.asarray(b, dtype=float).reshape(-1))
        return cls(arch, np.concatenate(parts))

    @property
    def weights(self) -> List[np.ndarray]:
        return self.arch.split(self.vector)[0]

    @property
    def biases(self) -> List[np.ndarray]:
        return self.arch.split(self.vector)[1]

    def with_vector(self, vector: np.ndarray) -> "ModelParams":
        return ModelParams(self.arch, vector)

    def shift_output_bias(self, delta: float) -> "ModelParams":
        """Copy with the output-layer bias moved by ``delta``."""
        vector = self.vector.copy()
        vector[-1] += delta
        return ModelParams(self.arch, vector)


@dataclass(frozen=True)
class Trajectory:
    """Every SGD state w(0) … w(T), kept for reverse-mode differentiation."""

    states: Tuple[ModelParams, ...]
    eta: float
    T: int

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, t: int) -> ModelParams:
        return self.states[t]

    @property
    def final(self) -> ModelParams:
        return self.states[-1]


@dataclass(frozen=True)
class Backprop:
    """Forward activations and backward deltas of one loss evaluation.

    ``inputs[l]`` is the input of layer ``l`` (``inputs[0]`` is X), ``pre[l]``
    its pre-activation and ``deltas[l]`` the loss derivative w.r.t. ``pre[l]``.
    """

    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    deltas: List[np.ndarray]
    residual: np.ndarray
    loss: float
    grad: np.ndarray
    grad_X: np.ndarray
    grad_y: np.ndarray = field(repr=False)


def leaky_relu(z: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(z > 0.0, z, slope * z)


def leaky_relu_prime(z: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(z > 0.0, 1.0, slope)


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """Zeros for the linear model; Xavier-uniform weights and 0.01 biases for the MLP."""
    if arch.kind is ModelKind.LINEAR:
        return ModelParams(arch, np.zeros(arch.n_params))
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.full(fan_out, MLP_BIAS_INIT))
    return ModelParams.from_layers(arch, weights, biases)


def _check_features(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.arch.n_features:
        raise ModelError(f"input of shape {X.shape} for a model with {params.arch.n_features} features")
    return X


def _forward_cache(params: ModelParams, X: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    weights, biases = params.weights, params.biases
    slope = params.arch.negative_slope
    inputs, pre = [X], []
    a = X
    for l, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        pre.append(z)
        if l < len(weights) - 1:
            a = leaky_relu(z, slope)
            inputs.append(a)
    return inputs, pre


def forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Model output f(X) as an n-vector."""
    X = _check_features(params, X)
    _, pre = _forward_cache(params, X)
    return pre[-1][:, 0]


def _regularizer(params: ModelParams) -> float:
    return 0.5 * sum(float(np.sum(W * W)) for W in params.weights)


def mse_loss(params: ModelParams, data: Dataset, lam: float = 0.0) -> float:
    """(1/2n)·Σ(f(x)−y)² + λ·½‖weights‖² (biases excluded)."""
    if data.n == 0:
        raise ModelError("loss of an empty dataset is undefined")
    if lam < 0:
        raise ModelError(f"regularization must be non-negative, got {lam}")
    r = forward(params, data.X) - data.y
    loss = float(r @ r) / (2.0 * data.n)
    if lam:
        loss += lam * _regularizer(params)
    return loss


def backward(params: ModelParams, data: Dataset, lam: float = 0.0) -> Backprop:
    """Loss, parameter gradient, and gradients w.r.t. every input row and label."""
    if data.n == 0:
        raise ModelError("loss of an empty dataset is undefined")
    X = _check_features(params, data.X)
    n = data.n
    arch = params.arch
    weights = params.weights
    inputs, pre = _forward_cache(params, X)
    residual = pre[-1][:, 0] - data.y

    deltas: List[np.ndarray] = [np.empty(0)] * arch.n_layers
    grad_W: List[np.ndarray] = [np.empty(0)] * arch.n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * arch.n_layers
    delta = residual[:, None] / n
    for l in reversed(range(arch.n_layers)):
        deltas[l] = delta
        grad_W[l] = inputs[l].T @ delta + lam * weights[l]
        grad_b[l] = delta.sum(axis=0)
        upstream = delta @ weights[l].T
        if l > 0:
            delta = upstream * leaky_relu_prime(pre[l - 1], arch.negative_slope)

    loss = float(residual @ residual) / (2.0 * n)
    if lam:
        loss += lam * _regularizer(params)
    grad = ModelParams.from_layers(arch, grad_W, grad_b).vector
    return Backprop(
        inputs=inputs,
        pre=pre,
        deltas=deltas,
        residual=residual,
        loss=loss,
        grad=grad,
        grad_X=upstream,
        grad_y=-residual / n,
    )


def grad_loss(params: ModelParams, data: Dataset, lam: float = 0.0) -> ModelParams:
    """Exact gradient of :func:`mse_loss`, shaped like the parameters."""
    if lam < 0:
        raise ModelError(f"regularization must be non-negative, got {lam}")
    return params.with_vector(backward(params, data, lam).grad)


def per_sample_grads(params: ModelParams, data: Dataset) -> np.ndarray:
    """Row i holds the parameter gradient of ½(f(x_i) − y_i)²."""
    bp = backward(params, data, 0.0)
    n = data.n
    blocks = []
    for l in range(params.arch.n_layers):
        delta = bp.deltas[l] * n
        blocks.append(np.einsum("ni,nj->nij", bp.inputs[l], delta).reshape(n, -1))
        blocks.append(delta)
    return np.hstack(blocks)


def sgd_train(params0: ModelParams, data: Dataset, eta: float, T: int, lam: float = 0.0) -> Trajectory:
    """
    Full-batch gradient descent, w(t+1) = w(t) − η∇L(w(t)), keeping every state.

    Raises:
        DivergenceError: As soon as a parameter becomes non-finite.
    """
    if eta <= 0:
        raise ModelError(f"learning rate must be positive, got {eta}")
    if T < 0:
        raise ModelError(f"iteration count must be non-negative, got {T}")
    states = [params0]
    w = params0.vector
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            g = backward(params0.with_vector(w), data, lam).grad
            w = w - eta * g
            if not np.all(np.isfinite(w)):
                raise DivergenceError(t + 1)
            states.append(params0.with_vector(w))
    return Trajectory(states=tuple(states), eta=eta, T=T)


def fit_lstsq(data: Dataset, lam: float = 0.0) -> ModelParams:
    """Exact minimizer of :func:`mse_loss` for the linear model."""
    arch = Architecture.linear(data.m)
    design = np.column_stack([data.X, np.ones(data.n)])
    if lam == 0.0:
        theta = np.linalg.lstsq(design, data.y, rcond=None)[0]
    else:
        penalty = np.diag(np.append(np.full(data.m, lam), 0.0))
        theta = np.linalg.solve(design.T @ design / data.n + penalty, design.T @ data.y / data.n)
    return ModelParams(arch, theta)


def residual_sigma(params: ModelParams, data: Dataset) -> float:
    """Residual standard error √(Σr²/df) with df = n − p − 1, p = number of features."""
    df = data.n - data.m - 1
    if df <= 0:
        raise ModelError(f"insufficient degrees of freedom: n={data.n}, p={data.m}")
    r = data.y - forward(params, data.X)
    return float(np.sqrt(r @ r / df))


def save_params(params: ModelParams, path: Union[str, os.PathLike]) -> None:
    payload = {"architecture": params.arch.to_dict(), "parameters": params.vector.tolist()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)


def load_params(path: Union[str, os.PathLike]) -> ModelParams:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    try:
        arch = Architecture.from_dict(payload["architecture"])
        return ModelParams(arch, np.asarray(payload["parameters"], dtype=float))
    except (KeyError, TypeError) as e:
        raise ModelError(f"malformed model file {path}: {e}") from e


def fit_model(data: Dataset, settings: TrainSettings) -> ModelParams:
    """Train a fresh model on ``data`` the way ``settings`` prescribes and return the final state."""
    if settings.solver == "lstsq":
        return fit_lstsq(data, settings.lam)
    arch = Architecture.for_kind(settings.model, data.m)
    return sgd_train(init_params(arch, settings.init_seed), data, settings.eta, settings.epochs, settings.lam).final
