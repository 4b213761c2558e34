#!/usr/bin/env python3
"""
Run one defense on a CSV training set and write its report.

A CSV written by the attack command keeps its ``is_poison`` column out of the
features; when present, the report also carries the rejection recall.
"""

import argparse
import csv
import json
import os
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

# Add the src directory to the path so we can import our modules
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models.model import DefenseName, DefenseSettings, TrainSettings
from poisonlab.datasets import save_csv
from poisonlab.defenses import DefenseReport
from poisonlab.errors import PoisonLabError
from poisonlab.harness import apply_defense, rejection_recall
from poisonlab.regressors import save_params
from scripts.common import DEFAULT_OUTPUT_DIR, add_data_arguments, load_from_args
from utils.config import load_config_file, resolve_output_dir
from utils.log import configure_logging

POISON_COLUMN = "is_poison"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisonlab defend", description="Run a defense on a training set.")
    add_data_arguments(parser)
    parser.add_argument("--defense", choices=[d.value for d in DefenseName], default=DefenseName.TRIM.value)
    parser.add_argument("--config", default=None,
                        help="file with [defense] and [train] tables (.toml or .json)")
    parser.add_argument("--reject-rate", type=float, default=None, help="override the rejection budget")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized defenses")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def read_poison_flags(path: str, has_header: bool) -> Optional[np.ndarray]:
    if not has_header:
        return None
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if POISON_COLUMN not in (reader.fieldnames or []):
            return None
        return np.array([row[POISON_COLUMN].strip().lower() == "true" for row in reader])


def report_to_dict(report: DefenseReport, recall: Optional[float]) -> dict:
    extras = {k: v for k, v in report.extras.items() if isinstance(v, (int, float, bool, str))}
    return {
        "defense": report.name,
        "n": report.n,
        "kept_indices": report.kept_indices.tolist(),
        "rejected_indices": report.rejected_indices.tolist(),
        "iterations": report.iterations,
        "diagnostics": list(report.diagnostics),
        "poison_recall": recall,
        **extras,
    }


def write_partition(report: DefenseReport, y: np.ndarray, path: str) -> None:
    partition = report.extras["partition"]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "y", "mu", "sigma", "zone"])
        for i, (mu, sigma, zone) in enumerate(zip(partition.mu, partition.sigma, partition.zones)):
            writer.writerow([i, repr(float(y[i])), repr(float(mu)), repr(float(sigma)), zone])


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    print(f"🚀 Running the {args.defense} defense...")
    try:
        values = load_config_file(args.config) if args.config else {}
        defense_cfg = DefenseSettings.model_validate(values.get("defense", {}))
        if args.reject_rate is not None:
            defense_cfg = DefenseSettings.model_validate({**defense_cfg.model_dump(), "reject_rate": args.reject_rate})
        train_cfg = TrainSettings.model_validate(values.get("train", {}))

        flags = read_poison_flags(args.data, not args.no_header)
        raw = load_from_args(args, drop_cols=(POISON_COLUMN,) if flags is not None else ())
        report = apply_defense(args.defense, raw, defense_cfg, train_cfg, args.seed)
        recall = rejection_recall(report, np.flatnonzero(flags)) if flags is not None and flags.any() else None

        out_dir = resolve_output_dir(args.out, DEFAULT_OUTPUT_DIR)
        os.makedirs(out_dir, exist_ok=True)
        report_path = os.path.join(out_dir, f"{args.defense}_report.json")
        with open(report_path, "w", encoding="utf-8") as f:
            json.dump(report_to_dict(report, recall), f, indent=2)
        kept_path = os.path.join(out_dir, f"{args.defense}_kept.csv")
        save_csv(raw.subset(report.kept_indices), kept_path)
        save_params(report.final_params, os.path.join(out_dir, f"{args.defense}_model.json"))
        if "partition" in report.extras:
            write_partition(report, raw.y, os.path.join(out_dir, "bayesclean_partition.csv"))
    except (PoisonLabError, ValidationError, OSError, ValueError) as e:
        print(f"❌ Error: {e}")
        return 1

    print(f"✅ Kept {report.kept_indices.size:,} of {report.n:,} rows")
    if recall is not None:
        print(f"🔎 Rejected {recall:.1%} of the known poisoning points")
    print(f"💾 Saved {report_path}")
    print(f"💾 Saved {kept_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
