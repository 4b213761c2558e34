#!/usr/bin/env python3
"""
End-to-end tests for the command-line entry points: synth, attack, defend
and experiment, each writing into a temporary directory.
"""

import csv
import json
import os
import tempfile

# Add the src directory to the path
import sys
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from main import main

FAST_PLAN = "batch_size = 2\nt_out = 2\ninner_t = 5\n"
FAST_EXPERIMENT = "[attack]\nbatch_size = 3\nt_out = 2\ninner_t = 5\n\n[train]\nepochs = 5\n"


def write_file(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def read_rows(path: str) -> list:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


class TestPipeline:
    """Tests for synth → attack → defend."""

    def test_synth_attack_defend(self) -> None:
        """Test that the three commands chain through their CSV outputs."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["synth", "--n", "60", "--seed", "1", "--out", temp_dir]) == 0
            data_path = os.path.join(temp_dir, "synthetic.csv")
            assert len(read_rows(data_path)) == 60

            plan_path = write_file(temp_dir, "plan.toml", FAST_PLAN)
            attack_dir = os.path.join(temp_dir, "attack")
            assert main(["attack", "--data", data_path, "--plan", plan_path, "--n-p", "4",
                         "--alpha", "0.5", "--out", attack_dir]) == 0
            poisoned_path = os.path.join(attack_dir, "poisoned_train.csv")
            rows = read_rows(poisoned_path)
            assert len(rows) == 30
            assert sum(r["is_poison"] == "true" for r in rows) == 4
            with open(os.path.join(attack_dir, "attack.json"), encoding="utf-8") as f:
                summary = json.load(f)
            assert len(summary["batches"]) == 2
            assert summary["settings"]["alpha"] == 0.5

            defend_dir = os.path.join(temp_dir, "defend")
            assert main(["defend", "--data", poisoned_path, "--defense", "trim", "--out", defend_dir]) == 0
            with open(os.path.join(defend_dir, "trim_report.json"), encoding="utf-8") as f:
                report = json.load(f)
            assert report["poison_recall"] is not None
            assert len(report["kept_indices"]) + len(report["rejected_indices"]) == 30
            assert os.path.exists(os.path.join(defend_dir, "trim_kept.csv"))
            assert os.path.exists(os.path.join(defend_dir, "trim_model.json"))

    def test_bayesclean_partition_file(self) -> None:
        """Test that the BayesClean defense also writes the per-point zones."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["synth", "--n", "40", "--out", temp_dir]) == 0
            out_dir = os.path.join(temp_dir, "defend")
            assert main(["defend", "--data", os.path.join(temp_dir, "synthetic.csv"),
                         "--defense", "bayesclean", "--out", out_dir]) == 0
            rows = read_rows(os.path.join(out_dir, "bayesclean_partition.csv"))
            assert len(rows) == 40
            assert {r["zone"] for r in rows} <= {"accept", "flag", "reject"}

    def test_attack_bad_data(self) -> None:
        """Test that a missing CSV gives exit code 1."""
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["attack", "--data", os.path.join(temp_dir, "missing.csv"), "--out", temp_dir]) == 1


class TestExperimentCommand:
    """Tests for the experiment command."""

    def test_small_grid(self) -> None:
        """Test that a small synthetic grid succeeds and writes its reports."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = write_file(temp_dir, "experiment.toml", FAST_EXPERIMENT)
            out_dir = os.path.join(temp_dir, "run")
            code = main(["experiment", "--config", config_path, "--synthetic-n", "60", "--repetitions", "1",
                         "--alphas", "1.0", "--ratios", "0,0.1", "--defenses", "trim", "--out", out_dir])
            assert code == 0
            for name in ("report.json", "summary.csv", "timings.json"):
                assert os.path.exists(os.path.join(out_dir, name))

    def test_invalid_ratio(self) -> None:
        """Test that a ratio above 0.45 gives exit code 1."""
        with tempfile.TemporaryDirectory() as temp_dir:
            code = main(["experiment", "--synthetic-n", "60", "--ratios", "0.9", "--out", temp_dir])
            assert code == 1
