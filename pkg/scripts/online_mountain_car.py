#!/usr/bin/env python3
"""Learning curves for the three GP-RMAX variants on mountain car.

Writes one run directory per variant under ``--out`` (see ``gprmax online``)
and prints the per-episode step counts.

    python3 scripts/online_mountain_car.py --seeds 0 1 2 --episodes 30
"""

import argparse
import sys

from gprmax.cli import cmd_online
from gprmax.config import ExperimentConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--variants", nargs="+", default=["exp", "noexp", "grid"])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--episodes", type=int, default=30)
    parser.add_argument("--out", default="results")
    args = parser.parse_args()
    status = 0
    for variant in args.variants:
        cfg = ExperimentConfig(domain="mountain_car", mode="online", variant=variant,
                               seeds=tuple(args.seeds), max_episodes=args.episodes,
                               checkpoints=(0, 120), out=args.out).validate()
        status |= cmd_online(cfg)
    return status


if __name__ == "__main__":
    sys.exit(main())
