#!/usr/bin/env python3
"""
Write a synthetic one-feature regression dataset (y = 0.8x + noise) as CSV.
"""

import argparse
import os
import sys
from typing import List, Optional

# Add the src directory to the path so we can import our modules
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from poisonlab.datasets import gen_synthetic, save_csv
from poisonlab.errors import PoisonLabError
from scripts.common import DEFAULT_OUTPUT_DIR
from utils.config import resolve_output_dir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisonlab synth", description=__doc__)
    parser.add_argument("--n", type=int, default=1000, help="number of rows")
    parser.add_argument("--seed", type=int, default=0, help="generator seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--name", default="synthetic.csv", help="output file name")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    print(f"🚀 Generating {args.n:,} synthetic rows (seed {args.seed})...")
    try:
        data = gen_synthetic(args.n, args.seed)
        out_dir = resolve_output_dir(args.out, DEFAULT_OUTPUT_DIR)
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, args.name)
        save_csv(data, path)
    except (PoisonLabError, OSError, ValueError) as e:
        print(f"❌ Error: {e}")
        return 1
    print(f"💾 Saved {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
