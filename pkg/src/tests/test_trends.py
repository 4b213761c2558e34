#!/usr/bin/env python3
"""
Slower statistical checks on synthetic data: predictive variance under label
poisoning, defense behaviour on clean data, the effect of alpha on the
attack's strength, TRIM against stealthy points and TRIM's breaking point
compared with BayesClean.

Run with ``pytest -m slow``.
"""

import os
from typing import Dict, List, Tuple

import numpy as np
import pytest

# Add the src directory to the path
import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models.model import (
    DEFAULT_SPLIT,
    AttackSettings,
    DefenseName,
    DefenseSettings,
    ExperimentConfig,
    RecordStatus,
    TrainSettings,
)
from poisonlab.attack import AttackResult, craft_attack, make_plan
from poisonlab.bayes import bayesclean
from poisonlab.datasets import Dataset, Scaler, gen_synthetic, split, standardize
from poisonlab.harness import apply_defense, rejection_recall, run_experiment

pytestmark = pytest.mark.slow

SEEDS = range(10)
CLEAN_SLOPE = 0.8


def label_shifted(data: Dataset, ratio: float, shift: float, seed: int) -> Dataset:
    """Copy of ``data`` with a random ``ratio`` of its labels moved up by ``shift``."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.n, size=int(round(ratio * data.n)), replace=False)
    y = data.y.copy()
    y[idx] += shift
    return Dataset(X=data.X, y=y)


def synthetic_config(**overrides) -> ExperimentConfig:
    """Synthetic grid shared by the attack trend checks: 200 training rows, batches of 10."""
    values = {
        "synthetic_n": 400,
        "repetitions": 10,
        "attack": {"batch_size": 10, "t_out": 30, "inner_t": 40, "inner_eta": 0.1, "gamma": 0.9},
        "train": {"epochs": 40, "eta": 0.1},
    }
    values.update(overrides)
    return ExperimentConfig.model_validate(values)


def ok_records(report, defense: DefenseName, alpha: float) -> List:
    return sorted(
        (r for r in report.records if r.defense is defense and r.alpha == alpha and r.status is RecordStatus.OK),
        key=lambda r: r.seed,
    )


class TestVarianceUnderPoisoning:
    """Predictive variance grows with the amount of label poisoning."""

    def test_more_poison_more_variance(self) -> None:
        """Test that mean σ*² at 18% poisoning exceeds the one at 2% in at least 9 of 10 seeds."""
        wins = 0
        for seed in SEEDS:
            data = gen_synthetic(300, seed)
            low = bayesclean(label_shifted(data, 0.02, 8.0, seed))
            high = bayesclean(label_shifted(data, 0.18, 8.0, seed))
            wins += int(np.mean(high.sigma ** 2) > np.mean(low.sigma ** 2))
        assert wins >= 9


class TestCleanDataSanity:
    """Defenses should cost little when there is nothing to defend against."""

    def test_every_defense_gain_near_zero(self) -> None:
        """Test that at ratio 0 the mean paired gain of every defense lies within ±10% under default settings."""
        config = ExperimentConfig.model_validate({
            "synthetic_n": 400,
            "repetitions": 10,
            "ratios": [0.0],
            "defenses": [d.value for d in DefenseName if d is not DefenseName.NONE],
        })
        report, _ = run_experiment(config, threads=4)
        assert report.all_succeeded
        gains = {s.defense: s.mean_gain_pct for s in report.summary if s.defense is not DefenseName.NONE}
        assert set(gains) == {d for d in DefenseName if d is not DefenseName.NONE}
        for defense, gain in gains.items():
            assert abs(gain) <= 10.0, f"{defense.value}: mean gain {gain:.2f}%"


class TestAlphaTradeoff:
    """A higher alpha favours effectiveness over stealth."""

    def test_undefended_error_ordered_by_alpha(self) -> None:
        """Test NMSE(α=1) > NMSE(α=0.3) > NMSE(α=0.1) at 30% poisoning, at most one seed inverting each pair."""
        alphas = [1.0, 0.3, 0.1]
        config = synthetic_config(alphas=alphas, ratios=[0.3], defenses=["none"], master_seed=11)
        report, _ = run_experiment(config, threads=4)
        assert report.all_succeeded

        per_seed = {a: np.array([r.nmse for r in ok_records(report, DefenseName.NONE, a)]) for a in alphas}
        for high, low in zip(alphas, alphas[1:]):
            assert per_seed[high].size == per_seed[low].size == 10
            assert per_seed[high].mean() > per_seed[low].mean()
            assert int(np.sum(per_seed[high] <= per_seed[low])) <= 1


class TestTrimAgainstStealth:
    """TRIM removes unconstrained poisoning points and struggles with constrained ones."""

    def test_trim_catches_alpha_one_not_alpha_point_four(self) -> None:
        """Test TRIM's recall at α=1 is at least 0.8 and that α=0.4 lowers both its recall and its gain."""
        config = synthetic_config(
            alphas=[1.0, 0.4], ratios=[0.2], defenses=["trim"], defense={"reject_rate": 0.2}, master_seed=5
        )
        report, _ = run_experiment(config, threads=4)
        assert report.all_succeeded

        def mean_of(alpha: float, field: str) -> float:
            return float(np.mean([getattr(r, field) for r in ok_records(report, DefenseName.TRIM, alpha)]))

        assert mean_of(1.0, "poison_recall") >= 0.8
        assert mean_of(0.4, "poison_recall") < mean_of(1.0, "poison_recall")
        assert mean_of(0.4, "gain_pct") < mean_of(1.0, "gain_pct")


def crafted_alpha_one(seed: int) -> Tuple[AttackResult, Dataset, Scaler]:
    """Full α = 1 attack of 30% on 200 standardized training rows, in batches of 10."""
    bundle, scaler = standardize(split(gen_synthetic(400, seed), DEFAULT_SPLIT, seed))
    settings = AttackSettings(alpha=1.0, n_p=60, batch_size=10, t_out=30, gamma=0.9, inner_t=40, inner_eta=0.1,
                              seed=seed)
    plan = make_plan(settings, bundle.train)
    return craft_attack(plan, 1.0, bundle.val, bundle.train), bundle.train, scaler


def slope_error(report, scaler: Scaler) -> float:
    """Distance of the defended slope, mapped back to raw units, from the generator's 0.8."""
    slope = report.final_params.vector[0] * scaler.std[-1] / scaler.std[0]
    return abs(slope - CLEAN_SLOPE)


class TestTrimBreakingPoint:
    """TRIM stops coping once the poisoning points pass a quarter of the data; BayesClean does not need the count."""

    @pytest.fixture(scope="class")
    def outcomes(self) -> Dict[str, List[float]]:
        train_cfg = TrainSettings()
        results: Dict[str, List[float]] = {"recall_20": [], "recall_30": [], "trim_30": [], "bayes_30": []}
        for seed in SEEDS:
            result, _, scaler = crafted_alpha_one(seed)
            twenty = result.snapshot(4)
            thirty = result.snapshot(6)
            trim_20 = apply_defense("trim", twenty, DefenseSettings(reject_rate=0.25), train_cfg)
            trim_30 = apply_defense("trim", thirty, DefenseSettings(reject_rate=0.3), train_cfg)
            bayes_30 = apply_defense("bayesclean", thirty, DefenseSettings(), train_cfg)
            results["recall_20"].append(rejection_recall(trim_20, result.poison_indices_upto(4)))
            results["recall_30"].append(rejection_recall(trim_30, result.poison_indices_upto(6)))
            results["trim_30"].append(slope_error(trim_30, scaler))
            results["bayes_30"].append(slope_error(bayes_30, scaler))
        return results

    def test_trim_holds_at_twenty_percent(self, outcomes: Dict[str, List[float]]) -> None:
        """Test that TRIM rejecting 25% removes at least 95% of a 20% attack on average."""
        assert np.mean(outcomes["recall_20"]) >= 0.95

    def test_trim_breaks_at_thirty_percent(self, outcomes: Dict[str, List[float]]) -> None:
        """Test that TRIM given the true 30% count removes less than 95% of the points on average."""
        assert np.mean(outcomes["recall_30"]) < 0.95

    def test_bayesclean_slope_beats_trim(self, outcomes: Dict[str, List[float]]) -> None:
        """Test that BayesClean's slope is closer to 0.8 than TRIM's in at least 8 of 10 seeds at 30%."""
        wins = sum(b < t for b, t in zip(outcomes["bayes_30"], outcomes["trim_30"]))
        assert wins >= 8
