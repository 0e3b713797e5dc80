#!/usr/bin/env python3
"""Plan with the true dynamics in every domain and roll out the greedy policy.

    python3 scripts/offline_references.py               # desk-scale grids
    python3 scripts/offline_references.py --full-scale  # 20^4 bicycle, 25^4 acrobot
"""

import argparse

from gprmax.agent import offline_plan
from gprmax.environments import make_env

DESK = {"mountain_car": (100, 100), "pendulum": (100, 100),
        "bicycle": (11,) * 4, "acrobot": (15,) * 4}
FULL = {"bicycle": (20,) * 4, "acrobot": (25,) * 4}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--full-scale", action="store_true")
    parser.add_argument("--domains", nargs="+", default=list(DESK))
    args = parser.parse_args()
    grids = {**DESK, **(FULL if args.full_scale else {})}
    print(f"{'domain':<14}{'grid':<14}{'steps':>6}{'return':>12}{'goal':>6}{'iters':>7}"
          f"{'seconds':>9}")
    for name in args.domains:
        env = make_env(name)
        res = offline_plan(env, grids[name])
        ro = res.rollout
        print(f"{name:<14}{'x'.join(map(str, res.grid.shape)):<14}{ro.steps:>6}"
              f"{ro.total_reward:>12.3f}{str(ro.reached_terminal):>6}{res.plan.iterations:>7}"
              f"{res.seconds:>9.1f}", flush=True)


if __name__ == "__main__":
    main()
