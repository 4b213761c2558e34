#!/usr/bin/env python3
"""
Tests for Bayesian linear regression: the SVD posterior, evidence EM,
the predictive distribution and the BayesClean zones.
"""

import os

import numpy as np
import pytest

# Add the src directory to the path
import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models.model import BayesCleanSettings, TrainSettings
from poisonlab.bayes import (
    ZONE_ACCEPT,
    ZONE_FLAG,
    ZONE_REJECT,
    bayesclean,
    bayesclean_defense,
    classify_zones,
    design_with_bias,
    em_fit,
    evidence_objective,
    posterior,
    predictive,
)
from poisonlab.datasets import Dataset, gen_synthetic
from poisonlab.errors import BayesError


def random_design(n: int, d: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = X @ rng.normal(size=d) + 0.5 * rng.normal(size=n)
    return X, y


class TestPosterior:
    """Tests for posterior."""

    def test_single_point(self) -> None:
        """Test x=1, y=1, λ=β=1 gives Σ=0.5 and μ=0.5."""
        state = posterior(np.array([[1.0]]), np.array([1.0]), 1.0, 1.0)
        assert state.cov[0, 0] == pytest.approx(0.5)
        assert state.mu[0] == pytest.approx(0.5)

    def test_prior_dominates(self) -> None:
        """Test that a huge weight precision pins the mean to zero."""
        X, y = random_design(20, 3, seed=0)
        state = posterior(X, y, 1e12, 1.0)
        assert np.all(np.abs(state.mu) <= 1e-9)

    @pytest.mark.parametrize("n,d", [(30, 4), (3, 6)])
    def test_matches_direct_inverse(self, n: int, d: int) -> None:
        """Test the SVD posterior against the explicit inverse, including n < d."""
        X, y = random_design(n, d, seed=1)
        lam, beta = 0.7, 2.5
        state = posterior(X, y, lam, beta)
        A = beta * X.T @ X + lam * np.eye(d)
        cov = np.linalg.inv(A)
        np.testing.assert_allclose(state.cov, cov, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(state.mu, beta * cov @ X.T @ y, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(A @ state.cov, np.eye(d), atol=1e-9)

    @pytest.mark.parametrize("seed", range(50))
    def test_random_problem_matches_direct_inverse(self, seed: int) -> None:
        """Test the SVD posterior within 1e-8 of the explicit inverse on a random problem with d <= 20, n <= 200."""
        rng = np.random.default_rng(500 + seed)
        n, d = int(rng.integers(2, 201)), int(rng.integers(1, 21))
        X, y = random_design(n, d, seed=600 + seed)
        lam, beta = float(rng.uniform(0.1, 10.0)), float(rng.uniform(0.1, 10.0))
        state = posterior(X, y, lam, beta)
        cov = np.linalg.inv(beta * X.T @ X + lam * np.eye(d))
        assert np.max(np.abs(state.cov - cov)) <= 1e-8
        assert np.max(np.abs(state.mu - beta * cov @ X.T @ y)) <= 1e-8

    def test_invalid_precisions(self) -> None:
        """Test that a non-positive precision is rejected."""
        with pytest.raises(BayesError):
            posterior(np.eye(2), np.ones(2), 0.0, 1.0)


class TestEmFit:
    """Tests for em_fit."""

    def test_objective_never_decreases(self) -> None:
        """Test that the recorded objective is monotone."""
        X, y = random_design(60, 3, seed=2)
        state = em_fit(X, y)
        assert np.all(np.diff(state.history) >= -1e-9)
        assert state.iterations >= 1

    @pytest.mark.parametrize("seed", range(50))
    def test_objective_monotone_on_random_data(self, seed: int) -> None:
        """Test that log evidence plus log prior never decreases across EM iterations."""
        rng = np.random.default_rng(700 + seed)
        X, y = random_design(int(rng.integers(5, 151)), int(rng.integers(1, 11)), seed=800 + seed)
        state = em_fit(X, y)
        assert np.all(np.diff(state.history) >= -1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_lands_next_to_grid_maximizer(self, seed: int) -> None:
        """Test that the learned (λ, β) are within one cell of the best point of a 50x50 log grid."""
        rng = np.random.default_rng(900 + seed)
        X, y = random_design(int(rng.integers(50, 201)), int(rng.integers(3, 9)), seed=950 + seed)
        lams = np.geomspace(1e-3, 1e3, 50)
        betas = np.geomspace(1e-2, 1e3, 50)
        scores = np.array([[evidence_objective(X, y, lam, beta) for beta in betas] for lam in lams])
        best_lam, best_beta = np.unravel_index(np.argmax(scores), scores.shape)
        state = em_fit(X, y)
        assert abs(int(np.argmin(np.abs(np.log(lams) - np.log(state.lam)))) - best_lam) <= 1
        assert abs(int(np.argmin(np.abs(np.log(betas) - np.log(state.beta)))) - best_beta) <= 1

    def test_noise_free_line(self) -> None:
        """Test that y = 2x is recovered almost exactly."""
        x = np.linspace(-3.0, 3.0, 50).reshape(-1, 1)
        state = em_fit(x, 2.0 * x[:, 0])
        assert abs(state.mu[0] - 2.0) <= 1e-3

    def test_beats_a_grid(self) -> None:
        """Test that the learned precisions score at least as well as any point of a coarse grid."""
        data = gen_synthetic(200, seed=3)
        X = design_with_bias(data.X)
        state = em_fit(X, data.y)
        best = evidence_objective(X, data.y, state.lam, state.beta)
        grid = max(
            evidence_objective(X, data.y, lam, beta)
            for lam in np.geomspace(1e-3, 1e2, 11)
            for beta in np.geomspace(1e-2, 1e2, 9)
        )
        assert best >= grid - 1e-3

    def test_noise_estimate(self) -> None:
        """Test that the learned noise variance is close to the generator's 1.44."""
        data = gen_synthetic(2000, seed=4)
        state = em_fit(design_with_bias(data.X), data.y)
        assert abs(state.noise_variance - 1.44) <= 0.15

    def test_invalid_settings(self) -> None:
        """Test that bad priors or zero iterations are rejected."""
        X, y = random_design(10, 2, seed=0)
        with pytest.raises(BayesError):
            em_fit(X, y, priors=(1e-6, 0.0, 1e-6, 1e-6))
        with pytest.raises(BayesError):
            em_fit(X, y, T_EM=0)


class TestPredictive:
    """Tests for predictive."""

    def test_origin(self) -> None:
        """Test that x* = 0 gives mean 0 and the noise variance."""
        X, y = random_design(30, 2, seed=5)
        state = posterior(X, y, 1.0, 4.0)
        mean, var = predictive(np.zeros(2), state)
        assert mean == 0.0
        assert var == pytest.approx(0.25)

    def test_variance_floor(self) -> None:
        """Test that every predictive variance is at least 1/β."""
        X, y = random_design(30, 3, seed=6)
        state = posterior(X, y, 0.5, 2.0)
        _, var = predictive(np.random.default_rng(0).normal(size=(50, 3)), state)
        assert np.all(var >= 0.5)

    def test_model_uncertainty_shrinks_with_data(self) -> None:
        """Test that x*ᵀΣx* at a fixed query point falls as the training set grows from 10 to 10⁴ rows."""
        data = gen_synthetic(10_000, seed=11)
        X = design_with_bias(data.X)
        query = np.array([2.0, 1.0])
        terms = []
        for n in (10, 100, 1000, 10_000):
            state = posterior(X[:n], data.y[:n], 1.0, 1.0 / 1.44)
            _, var = predictive(query, state)
            terms.append(var - state.noise_variance)
        assert all(a > b for a, b in zip(terms, terms[1:]))

    def test_feature_mismatch(self) -> None:
        """Test that a wrong input width is rejected."""
        state = posterior(np.eye(2), np.ones(2), 1.0, 1.0)
        with pytest.raises(BayesError):
            predictive(np.zeros(3), state)


class TestZones:
    """Tests for classify_zones, bayesclean and bayesclean_defense."""

    def test_magnitude_rule(self) -> None:
        """Test zones from |y| against |μ + c·σ| with μ=1, σ=1."""
        y = np.array([0.5, 1.2, 2.0, 3.0, -1.4])
        zones = classify_zones(y, np.ones(5), np.ones(5), 0.5, 1.5)
        assert zones.tolist() == [ZONE_ACCEPT, ZONE_ACCEPT, ZONE_FLAG, ZONE_REJECT, ZONE_ACCEPT]

    def test_symmetric_rule(self) -> None:
        """Test zones from |y − μ| against c·σ."""
        y = np.array([1.2, 2.0, 3.0, -1.4])
        zones = classify_zones(y, np.ones(4), np.ones(4), 0.5, 1.5, symmetric=True)
        assert zones.tolist() == [ZONE_ACCEPT, ZONE_FLAG, ZONE_REJECT, ZONE_REJECT]

    def test_equal_thresholds_have_no_flags(self) -> None:
        """Test that c1 = c2 leaves the flag zone empty."""
        data = gen_synthetic(80, seed=7)
        partition = bayesclean(data, c1=1.0, c2=1.0)
        assert partition.flag.size == 0

    def test_thresholds_ordered(self) -> None:
        """Test that c1 > c2 is rejected."""
        with pytest.raises(BayesError):
            classify_zones(np.zeros(1), np.zeros(1), np.ones(1), 2.0, 1.0)

    def test_partition_covers_every_point(self) -> None:
        """Test that the three zones are disjoint and cover the data."""
        data = gen_synthetic(100, seed=8)
        partition = bayesclean(data)
        union = np.concatenate([partition.accept, partition.flag, partition.reject])
        np.testing.assert_array_equal(np.sort(union), np.arange(100))
        np.testing.assert_array_equal(partition.rejected, np.union1d(partition.flag, partition.reject))

    def test_defense_drops_label_outliers(self) -> None:
        """Test that labels far above the line are never accepted."""
        data = gen_synthetic(100, seed=9)
        y = data.y.copy()
        y[:10] = 50.0
        report = bayesclean_defense(Dataset(X=data.X, y=y), BayesCleanSettings(), TrainSettings(solver="lstsq"))
        assert not set(range(10)) & set(report.kept_indices.tolist())
        assert report.extras["partition"].accept.size == report.kept_indices.size
        assert report.extras["beta"] > 0
