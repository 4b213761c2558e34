"""
Argument helpers shared by the command-line scripts.
"""

import argparse
import os
import sys
from typing import Optional, Sequence, Tuple

# Add the src directory to the path so we can import our modules
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models.model import DEFAULT_SPLIT
from poisonlab.datasets import RawDataset, Scaler, SplitBundle, load_csv, split, standardize

DEFAULT_OUTPUT_DIR = "output"


def parse_split(text: str) -> Tuple[float, float, float]:
    """Parse ``"0.5,0.15,0.35"`` into three fractions."""
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"split must be three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"split must have three parts, got {len(parts)}")
    return parts


def parse_target(text: Optional[str]):
    if text is None:
        return None
    return int(text) if text.lstrip("-").isdigit() else text


def add_data_arguments(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--data", required=required, help="input CSV (last column is the label)")
    parser.add_argument("--target-col", default=None, help="label column index or name")
    parser.add_argument("--no-header", action="store_true", help="the CSV has no header row")


def add_split_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--split", type=parse_split, default=DEFAULT_SPLIT,
                        help="train,val,test fractions (default 0.5,0.15,0.35)")
    parser.add_argument("--seed", type=int, default=0, help="split and attack seed")


def load_from_args(args: argparse.Namespace, drop_cols: Sequence[str] = ()) -> RawDataset:
    print(f"📖 Reading {args.data}...")
    raw = load_csv(args.data, has_header=not args.no_header, target_col=parse_target(args.target_col),
                   drop_cols=drop_cols)
    print(f"✅ Loaded {raw.n:,} rows with {raw.m} features")
    return raw


def split_from_args(raw: RawDataset, args: argparse.Namespace) -> Tuple[SplitBundle, Scaler]:
    bundle, scaler = standardize(split(raw, args.split, args.seed))
    print(f"🔀 Split into {bundle.train.n}/{bundle.val.n}/{bundle.test.n} rows (train/val/test), standardized")
    return bundle, scaler
