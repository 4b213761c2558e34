#!/usr/bin/env python3
"""
Run a full poisoning experiment grid and write its reports.

This script:
1. Builds the ExperimentConfig from a TOML/JSON file and command-line overrides
2. Fills attack and training settings from the dataset/model preset when asked
3. Runs every (repetition, alpha, ratio, defense) cell
4. Writes report.json, summary.csv and timings.json

Exits with 0 only when every cell succeeded.
"""

import argparse
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

# Add the src directory to the path so we can import our modules
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models.model import DefenseName, ExperimentConfig, preset
from poisonlab.errors import PoisonLabError
from poisonlab.harness import run_experiment, write_report
from scripts.common import DEFAULT_OUTPUT_DIR, parse_split, parse_target
from utils.config import get_settings, load_config_file, resolve_output_dir
from utils.log import configure_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisonlab experiment", description="Run the experiment grid.")
    parser.add_argument("--config", default=None, help="experiment config (.toml or .json)")
    parser.add_argument("--data", default=None, help="CSV source (overrides the config)")
    parser.add_argument("--target-col", default=None, help="label column index or name")
    parser.add_argument("--synthetic-n", type=int, default=None, help="use n synthetic rows instead of a CSV")
    parser.add_argument("--dataset", default=None, help="dataset name used in reports and presets")
    parser.add_argument("--model", choices=["linear", "mlp"], default=None)
    parser.add_argument("--preset", action="store_true",
                        help="take attack/training settings from the (dataset, model) preset")
    parser.add_argument("--split", type=parse_split, default=None)
    parser.add_argument("--alphas", default=None, help="comma-separated alpha values")
    parser.add_argument("--ratios", default=None, help="comma-separated poisoning ratios")
    parser.add_argument("--defenses", default=None,
                        help=f"comma-separated subset of {','.join(d.value for d in DefenseName)}")
    parser.add_argument("--repetitions", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--threads", type=int, default=None, help="concurrency cap")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    values = load_config_file(args.config) if args.config else {}
    if args.data is not None:
        values["csv_path"] = args.data
        values.pop("synthetic_n", None)
    if args.synthetic_n is not None:
        values["synthetic_n"] = args.synthetic_n
        values.pop("csv_path", None)
    if "csv_path" not in values and "synthetic_n" not in values:
        values["synthetic_n"] = 1000
    overrides = {
        "target_col": parse_target(args.target_col),
        "dataset": args.dataset,
        "split": args.split,
        "alphas": _floats(args.alphas) if args.alphas else None,
        "ratios": _floats(args.ratios) if args.ratios else None,
        "defenses": [d.strip() for d in args.defenses.split(",")] if args.defenses else None,
        "repetitions": args.repetitions,
        "master_seed": args.seed,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})

    if args.model is not None:
        values.setdefault("attack", {})["model"] = args.model
        values.setdefault("train", {})["model"] = args.model
    if args.preset:
        model = args.model or values.get("train", {}).get("model", "linear")
        attack, train = preset(values.get("dataset", "synthetic"), model)
        values["attack"] = {**attack.model_dump(by_alias=True), **values.get("attack", {})}
        values["train"] = {**train.model_dump(by_alias=True), **values.get("train", {})}
    return ExperimentConfig.model_validate(values)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    print("🚀 Starting experiment...")
    try:
        config = build_config(args)
        threads = args.threads or config.threads or get_settings().threads
        out_dir = resolve_output_dir(args.out, str(config.output_dir or DEFAULT_OUTPUT_DIR))
        print(f"🧪 {config.dataset}/{config.train.model}: {config.repetitions} repetitions × "
              f"{len(config.alphas)} alphas × {len(config.ratios)} ratios, {threads} thread(s)")
        report, timings = run_experiment(config, threads=threads)
        paths = write_report(report, out_dir, timings)
    except KeyError as e:
        print(f"❌ Error: no preset for {e}")
        return 1
    except (PoisonLabError, ValidationError, OSError, ValueError) as e:
        print(f"❌ Error: {e}")
        return 1

    failed = sum(1 for r in report.records if r.status.value == "failed")
    for name, path in paths.items():
        print(f"💾 Saved {name}: {path}")
    if failed:
        print(f"⚠️ {failed} of {len(report.records)} cells failed")
        return 1
    print(f"✅ All {len(report.records)} cells succeeded")
    return 0


if __name__ == "__main__":
    sys.exit(main())
