#!/usr/bin/env python3
"""
Tests for the regressors module: architectures, initialization, forward pass,
loss and gradients, SGD training, residual sigma and persistence.
"""

import os
import tempfile

import numpy as np
import pytest

# Add the src directory to the path
import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models.model import TrainSettings
from poisonlab.datasets import Dataset, gen_synthetic
from poisonlab.errors import DivergenceError, ModelError
from poisonlab.regressors import (
    Architecture,
    ModelKind,
    ModelParams,
    fit_lstsq,
    fit_model,
    forward,
    grad_loss,
    init_params,
    leaky_relu,
    load_params,
    mse_loss,
    per_sample_grads,
    residual_sigma,
    save_params,
    sgd_train,
)


def linear_params(w, b) -> ModelParams:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    return ModelParams(Architecture.linear(w.size), np.append(w, b))


def random_mlp(n_features: int, seed: int) -> ModelParams:
    arch = Architecture.mlp(n_features)
    rng = np.random.default_rng(seed)
    return ModelParams(arch, rng.normal(0.0, 0.5, size=arch.n_params))


def random_data(n: int, m: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(X=rng.normal(size=(n, m)), y=rng.normal(size=n))


def numeric_grad(params: ModelParams, data: Dataset, lam: float, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros(params.arch.n_params)
    for i in range(grad.size):
        plus = params.vector.copy()
        minus = params.vector.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = mse_loss(params.with_vector(plus), data, lam)
        f_minus = mse_loss(params.with_vector(minus), data, lam)
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad


class TestArchitecture:
    """Tests for Architecture."""

    def test_mlp_shape(self) -> None:
        """Test the fixed m×32×8×1 layout."""
        arch = Architecture.mlp(16)
        assert arch.layer_widths == (16, 32, 8, 1)
        assert arch.n_params == 16 * 32 + 32 + 32 * 8 + 8 + 8 + 1

    def test_output_width_must_be_one(self) -> None:
        """Test that a multi-output architecture is rejected."""
        with pytest.raises(ModelError):
            Architecture(ModelKind.MLP, (3, 4, 2))

    def test_dict_round_trip(self) -> None:
        """Test that the descriptor survives to_dict/from_dict."""
        arch = Architecture.mlp(5)
        assert Architecture.from_dict(arch.to_dict()) == arch


class TestInitParams:
    """Tests for init_params."""

    def test_linear_zeros(self) -> None:
        """Test that the linear model starts at zero."""
        params = init_params(Architecture.linear(4), seed=7)
        np.testing.assert_array_equal(params.vector, 0.0)

    def test_mlp_biases_and_xavier_bound(self) -> None:
        """Test 0.01 biases and Xavier-uniform weight bounds."""
        params = init_params(Architecture.mlp(16), seed=0)
        for b in params.biases:
            np.testing.assert_array_equal(b, 0.01)
        first = params.weights[0]
        assert first.shape == (16, 32)
        assert np.all(np.abs(first) <= np.sqrt(6.0 / 48.0))

    def test_mlp_seeded(self) -> None:
        """Test that the same seed gives the same weights."""
        a = init_params(Architecture.mlp(3), seed=11)
        b = init_params(Architecture.mlp(3), seed=11)
        np.testing.assert_array_equal(a.vector, b.vector)


class TestForward:
    """Tests for forward."""

    def test_linear(self) -> None:
        """Test w=[2], b=1, x=3 gives 7."""
        assert forward(linear_params([2.0], 1.0), np.array([[3.0]]))[0] == 7.0

    def test_mlp_zero_weights(self) -> None:
        """Test that zero weights and 0.01 biases give 0.01 for any input."""
        arch = Architecture.mlp(3)
        weights = [np.zeros(shape) for shape in arch.layer_shapes]
        biases = [np.full(shape[1], 0.01) for shape in arch.layer_shapes]
        params = ModelParams.from_layers(arch, weights, biases)
        out = forward(params, np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_allclose(out, 0.01)

    def test_leaky_relu(self) -> None:
        """Test LeakyReLU(-1) = -0.01."""
        assert leaky_relu(np.array([-1.0]))[0] == pytest.approx(-0.01)

    def test_shape_mismatch(self) -> None:
        """Test that a wrong feature count raises ModelError."""
        with pytest.raises(ModelError):
            forward(linear_params([1.0, 2.0], 0.0), np.zeros((3, 3)))


class TestMseLoss:
    """Tests for mse_loss."""

    def test_perfect_fit(self) -> None:
        """Test zero loss on an exact fit."""
        data = Dataset(X=np.array([[1.0], [2.0]]), y=np.array([3.0, 5.0]))
        assert mse_loss(linear_params([2.0], 1.0), data) == 0.0

    def test_single_residual(self) -> None:
        """Test one point with residual 2 gives 2."""
        data = Dataset(X=np.array([[0.0]]), y=np.array([0.0]))
        assert mse_loss(linear_params([0.0], 2.0), data) == pytest.approx(2.0)

    def test_regularizer(self) -> None:
        """Test λ=0.1, w=[2] and a perfect fit gives 0.2."""
        data = Dataset(X=np.array([[1.0]]), y=np.array([2.0]))
        assert mse_loss(linear_params([2.0], 0.0), data, lam=0.1) == pytest.approx(0.2)

    def test_empty_dataset(self) -> None:
        """Test that an empty dataset raises ModelError."""
        with pytest.raises(ModelError):
            mse_loss(linear_params([1.0], 0.0), Dataset(X=np.zeros((0, 1)), y=np.zeros(0)))

    def test_convex_along_segment(self) -> None:
        """Test that the linear loss lies under its chord."""
        data = random_data(30, 3, seed=2)
        a = linear_params([1.0, -2.0, 0.5], 0.3)
        b = linear_params([-1.0, 0.0, 2.0], -1.0)
        la, lb = mse_loss(a, data), mse_loss(b, data)
        for t in np.linspace(0.0, 1.0, 11):
            mid = a.with_vector((1 - t) * a.vector + t * b.vector)
            assert mse_loss(mid, data) <= (1 - t) * la + t * lb + 1e-9


class TestGradLoss:
    """Tests for grad_loss."""

    def test_stationary_point(self) -> None:
        """Test a zero gradient at a perfect fit."""
        data = Dataset(X=np.array([[1.0], [2.0]]), y=np.array([3.0, 5.0]))
        np.testing.assert_allclose(grad_loss(linear_params([2.0], 1.0), data).vector, 0.0)

    def test_single_point(self) -> None:
        """Test x=1, y=0, w=1, b=0 gives ∂w=1 and ∂b=1."""
        data = Dataset(X=np.array([[1.0]]), y=np.array([0.0]))
        np.testing.assert_allclose(grad_loss(linear_params([1.0], 0.0), data).vector, [1.0, 1.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_linear_matches_finite_differences(self, seed: int) -> None:
        """Test the linear gradient against central differences."""
        data = random_data(20, 4, seed)
        rng = np.random.default_rng(seed + 100)
        params = linear_params(rng.normal(size=4), rng.normal())
        analytic = grad_loss(params, data, lam=0.05).vector
        numeric = numeric_grad(params, data, lam=0.05)
        assert np.linalg.norm(analytic - numeric) <= 1e-6 * max(1.0, np.linalg.norm(numeric))

    @pytest.mark.parametrize("seed", range(3))
    def test_mlp_matches_finite_differences(self, seed: int) -> None:
        """Test the MLP gradient against central differences."""
        data = random_data(15, 3, seed)
        params = random_mlp(3, seed)
        analytic = grad_loss(params, data, lam=0.01).vector
        numeric = numeric_grad(params, data, lam=0.01)
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(1.0, np.linalg.norm(numeric))

    def test_per_sample_grads_average_to_gradient(self) -> None:
        """Test that per-point gradients average to the full unregularized gradient."""
        data = random_data(12, 2, seed=4)
        params = random_mlp(2, seed=4)
        rows = per_sample_grads(params, data)
        assert rows.shape == (12, params.arch.n_params)
        np.testing.assert_allclose(rows.mean(axis=0), grad_loss(params, data).vector, atol=1e-12)


class TestSgdTrain:
    """Tests for sgd_train."""

    def test_zero_iterations(self) -> None:
        """Test that T=0 keeps only the initial parameters."""
        params = init_params(Architecture.linear(1), 0)
        trajectory = sgd_train(params, gen_synthetic(10, 0), eta=0.1, T=0)
        assert len(trajectory) == 1
        assert trajectory.final is params

    def test_converges_to_least_squares(self) -> None:
        """Test that 200 steps of η=0.1 reach the OLS slope on standardized 1-D data."""
        raw = gen_synthetic(200, seed=1)
        x = (raw.X[:, 0] - raw.X[:, 0].mean()) / raw.X[:, 0].std()
        data = Dataset(X=x.reshape(-1, 1), y=raw.y)
        trajectory = sgd_train(init_params(Architecture.linear(1), 0), data, eta=0.1, T=200)
        ols = fit_lstsq(data)
        assert abs(trajectory.final.vector[0] - ols.vector[0]) <= 1e-3

    def test_replay_is_bit_identical(self) -> None:
        """Test that replaying every update reproduces the stored states exactly."""
        data = random_data(10, 2, seed=6)
        trajectory = sgd_train(random_mlp(2, 6), data, eta=0.05, T=5)
        for t in range(5):
            w = trajectory[t].vector - 0.05 * grad_loss(trajectory[t], data).vector
            np.testing.assert_array_equal(w, trajectory[t + 1].vector)

    def test_divergence_guard(self) -> None:
        """Test that a too-large step on a steep quadratic raises DivergenceError."""
        data = Dataset(X=np.array([[1e3], [-1e3]]), y=np.array([1.0, -1.0]))
        with pytest.raises(DivergenceError) as info:
            sgd_train(init_params(Architecture.linear(1), 0), data, eta=1.0, T=500)
        assert info.value.iteration >= 1

    def test_invalid_learning_rate(self) -> None:
        """Test that η ≤ 0 is rejected."""
        with pytest.raises(ModelError):
            sgd_train(init_params(Architecture.linear(1), 0), gen_synthetic(5, 0), eta=0.0, T=3)


class TestResidualSigma:
    """Tests for residual_sigma."""

    def test_perfect_fit(self) -> None:
        """Test σ = 0 on an exact fit."""
        x = np.arange(10.0).reshape(-1, 1)
        data = Dataset(X=x, y=2 * x[:, 0] + 1)
        assert residual_sigma(linear_params([2.0], 1.0), data) == 0.0

    def test_formula(self) -> None:
        """Test residuals (1, -1, 0) with n=3, p=1 give √2."""
        data = Dataset(X=np.zeros((3, 1)), y=np.array([1.0, -1.0, 0.0]))
        assert residual_sigma(linear_params([0.0], 0.0), data) == pytest.approx(np.sqrt(2.0))

    def test_insufficient_degrees_of_freedom(self) -> None:
        """Test that n=2, p=1 raises."""
        data = Dataset(X=np.zeros((2, 1)), y=np.zeros(2))
        with pytest.raises(ModelError, match="insufficient degrees of freedom"):
            residual_sigma(linear_params([0.0], 0.0), data)


class TestFitModel:
    """Tests for fit_model and persistence."""

    def test_lstsq_solver(self) -> None:
        """Test that the lstsq solver returns the exact linear minimizer."""
        data = random_data(40, 3, seed=8)
        params = fit_model(data, TrainSettings(solver="lstsq"))
        np.testing.assert_allclose(grad_loss(params, data).vector, 0.0, atol=1e-10)

    def test_sgd_solver_matches_trajectory(self) -> None:
        """Test that the SGD solver is the final state of sgd_train."""
        data = random_data(20, 2, seed=9)
        settings = TrainSettings(epochs=15, eta=0.1)
        expected = sgd_train(init_params(Architecture.linear(2), 0), data, 0.1, 15).final
        np.testing.assert_array_equal(fit_model(data, settings).vector, expected.vector)

    def test_save_and_load(self) -> None:
        """Test that saved parameters reload with the same architecture and values."""
        params = random_mlp(4, seed=1)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "model.json")
            save_params(params, path)
            loaded = load_params(path)
        assert loaded.arch == params.arch
        np.testing.assert_array_equal(loaded.vector, params.vector)
