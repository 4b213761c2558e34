#!/usr/bin/env python3
"""
Craft a stealthy poisoning attack against a CSV dataset.

This script:
1. Loads the CSV, splits it and standardizes with clean training statistics
2. Reads the attack plan (TOML/JSON flat keys) and draws the poisoning batches
3. Computes the detectability reference and crafts every batch
4. Writes the poisoned training set with an ``is_poison`` column plus a JSON summary
"""

import argparse
import json
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

# Add the src directory to the path so we can import our modules
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models.model import AttackSettings
from poisonlab.attack import compute_R_ref, craft_attack, make_plan
from poisonlab.datasets import save_csv
from poisonlab.errors import PoisonLabError
from scripts.common import (
    DEFAULT_OUTPUT_DIR,
    add_data_arguments,
    add_split_arguments,
    load_from_args,
    split_from_args,
)
from utils.config import load_config_file, resolve_output_dir
from utils.log import configure_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisonlab attack", description="Craft a poisoned training set.")
    add_data_arguments(parser)
    add_split_arguments(parser)
    parser.add_argument("--plan", default=None, help="attack plan file (.toml or .json)")
    parser.add_argument("--alpha", type=float, default=None, help="override the plan's alpha")
    parser.add_argument("--n-p", type=int, default=None, help="override the number of poisoning points")
    parser.add_argument("--inject", action="store_true", help="append poisons instead of replacing rows")
    parser.add_argument("--no-normalize", action="store_true", help="use unit normalization references")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def load_plan_settings(args: argparse.Namespace) -> AttackSettings:
    values = load_config_file(args.plan) if args.plan else {}
    overrides = {"alpha": args.alpha, "n_p": args.n_p}
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.inject:
        values["inject"] = True
    if args.no_normalize:
        values["normalize"] = False
    values.setdefault("seed", args.seed)
    return AttackSettings.model_validate(values)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    print("🚀 Starting attack crafting...")
    try:
        settings = load_plan_settings(args)
        raw = load_from_args(args)
        bundle, _ = split_from_args(raw, args)

        plan = make_plan(settings, bundle.train)
        print(f"🎯 {plan.n_poison} poisoning points in {plan.n_batches} batch(es), alpha={settings.alpha}")
        if settings.normalize and plan.n_batches:
            print("📏 Computing the detectability reference...")
            r_ref = compute_R_ref(plan, bundle.val, bundle.train)
        else:
            r_ref = 1.0
        result = craft_attack(plan, r_ref, bundle.val, bundle.train)

        out_dir = resolve_output_dir(args.out, DEFAULT_OUTPUT_DIR)
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "poisoned_train.csv")
        save_csv(result.poisoned, csv_path, extra_columns={"is_poison": result.is_poison()})
        summary_path = os.path.join(out_dir, "attack.json")
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump({
                "settings": settings.model_dump(mode="json", by_alias=True),
                "r_ref": result.r_ref,
                "ratio": result.ratio(),
                "sigma": plan.clean.sigma,
                "batches": [
                    {"batch": b.batch, "indices": b.indices.tolist(), "l_ref": b.l_ref, "risk": b.risk,
                     "objective": list(b.objective_history)}
                    for b in result.batches
                ],
            }, f, indent=2)
    except (PoisonLabError, ValidationError, OSError, ValueError) as e:
        print(f"❌ Error: {e}")
        return 1

    print(f"💾 Saved {csv_path}")
    print(f"💾 Saved {summary_path}")
    print(f"✅ Poisoning ratio {result.ratio():.1%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
