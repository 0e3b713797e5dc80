#!/usr/bin/env python3
"""Value, uncertainty and sample panels of mountain car after 120 samples.

Runs the ``exp`` and ``grid`` variants just long enough to store checkpoints
at 0 and 120 samples, exports the panels as CSV and prints how much the
uncertainty varies along each state axis.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from gprmax.cli import cmd_online, cmd_snapshot
from gprmax.config import ExperimentConfig

STEPS = (0, 120)


def axis_variation(path: Path, shape=(100, 100)):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    rows = []
    for col in range(2, data.shape[1]):
        c = data[:, col].reshape(shape)          # [position, velocity]
        rows.append(((c.max(1) - c.min(1)).max(), (c.max(0) - c.min(0)).max(),
                     float((c > 0.5).mean())))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="results/snapshot")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    for variant in ("exp", "grid"):
        cfg = ExperimentConfig(domain="mountain_car", mode="online", variant=variant,
                               seeds=(args.seed,), max_episodes=1, episode_cap=max(STEPS) + 1,
                               checkpoints=STEPS, out=args.out).validate()
        if cmd_online(cfg):
            return 1
        run_dir = Path(args.out) / f"mountain_car_online_{variant}"
        if cmd_snapshot(run_dir, list(STEPS), args.seed):
            return 1
        for step in STEPS:
            for a, (vel, pos, frac) in enumerate(
                    axis_variation(run_dir / f"snapshot_step{step}_uncertainty.csv")):
                print(f"{variant} step {step} action {a}: variation along velocity {vel:.3f}, "
                      f"along position {pos:.3f}, fraction uncertain {frac:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
