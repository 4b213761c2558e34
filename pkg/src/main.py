import argparse
import os
import sys
from typing import List, Optional

sys.path.append(os.path.dirname(__file__))

from scripts import craft_poison, create_synthetic, run_defense, run_experiment

COMMANDS = {
    "synth": create_synthetic.main,
    "attack": craft_poison.main,
    "defend": run_defense.main,
    "experiment": run_experiment.main,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="poisonlab", description="Regression poisoning lab")
    parser.add_argument("command", choices=sorted(COMMANDS), help="sub-command to run")
    parser.add_argument("args", nargs=argparse.REMAINDER, help="arguments for the sub-command")
    args = parser.parse_args(argv)
    return COMMANDS[args.command](args.args)


if __name__ == "__main__":
    sys.exit(main())
