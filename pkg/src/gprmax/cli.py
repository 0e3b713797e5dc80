"""Command-line front end.

    gprmax offline  --domain mountain_car --grid 100x100
    gprmax online   --domain mountain_car --variant exp --seeds 0 1 2
    gprmax snapshot --run results/mountain_car_online_exp --seed 0 --steps 0 120
    gprmax run      --config experiment.json

Exit status is 0 on success, 1 on a runtime failure and 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .agent import Checkpoint, RunLog, Variant, offline_plan, run
from .config import ConfigError, ExperimentConfig, parse_grid
from .environments import make_env
from .model import DynamicsModel
from .planner import Grid, PlannerDivergence, value_grid

log = logging.getLogger("gprmax")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse already exits with 2 on usage errors; keep the message short
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.10g")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    return {"gprmax": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _state_names(dim: int) -> list[str]:
    return [f"x{i}" for i in range(dim)]


def _export_q(path: Path, q: np.ndarray, grid: Grid) -> None:
    header = _state_names(grid.dim) + [f"q{a}" for a in range(q.shape[1])]
    write_csv(path, header, np.column_stack([grid.nodes(), q]))


def _export_value(path: Path, q: np.ndarray, grid: Grid) -> None:
    write_csv(path, _state_names(grid.dim) + ["value"], value_grid(q, grid))


# ---------------------------------------------------------------------------
# offline


def cmd_offline(cfg: ExperimentConfig) -> int:
    env = make_env(cfg.domain, cfg.gamma)
    out = Path(cfg.out) / f"{cfg.domain}_offline"
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = offline_plan(env, cfg.grid, cfg.tol, cfg.max_iters)
    except (PlannerDivergence, ValueError) as exc:
        print(f"planner failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    _export_q(out / "q.csv", res.q, res.grid)
    _export_value(out / "value_grid.csv", res.q, res.grid)
    ro = res.rollout
    steps = np.arange(len(ro.states))
    acts = np.append(ro.actions, -1)
    rews = np.append(ro.rewards, np.nan)
    write_csv(out / "rollout.csv", ["t"] + _state_names(env.dim) + ["action", "reward"],
              np.column_stack([steps, ro.states, acts, rews]))
    summary = {
        "domain": cfg.domain, "grid": list(res.grid.shape), "steps": ro.steps,
        "total_reward": ro.total_reward, "reached_terminal": ro.reached_terminal,
        "iterations": res.plan.iterations, "converged": res.plan.converged,
        "seconds": res.seconds, "config": cfg.to_dict(), "versions": _versions(),
    }
    write_json(out / "summary.json", summary)
    print(f"{cfg.domain} offline grid={'x'.join(map(str, res.grid.shape))} "
          f"steps={ro.steps} return={ro.total_reward:.4f} "
          f"iterations={res.plan.iterations} converged={res.plan.converged}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# online


def _run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / f"{cfg.domain}_online_{cfg.variant}"


def _checkpoint_dict(ck: Checkpoint, grid: Grid, variant: str) -> dict:
    return {
        "samples": ck.samples,
        "variant": variant,
        "grid": grid.to_dict(),
        "model": ck.model.to_dict(),
        "q": ck.q.tolist(),
        "knownness": None if ck.knownness is None else ck.knownness.tolist(),
    }


def _save_run(out: Path, seed: int, cfg: ExperimentConfig, runlog: RunLog) -> None:
    write_csv(out / f"runlog_seed{seed}.csv",
              ["episode", "steps", "total_reward", "cumulative_samples"],
              [list(e) for e in runlog.episodes])
    if runlog.data is not None and len(runlog.data):
        dim = runlog.data.dim
        write_csv(out / f"samples_seed{seed}.csv",
                  _state_names(dim) + ["action"] + [f"next_x{i}" for i in range(dim)],
                  runlog.data.to_rows())
    meta = {
        "config": cfg.to_dict(), "seed": seed, "versions": _versions(),
        "stopped_at": runlog.stopped_at, "error": runlog.error,
        "timings": runlog.timings(),
        "plans": [p._asdict() for p in runlog.plans],
        "checkpoints": sorted(runlog.checkpoints),
    }
    write_json(out / f"metadata_seed{seed}.json", meta)
    for step, ck in runlog.checkpoints.items():
        write_json(out / f"checkpoint_seed{seed}_step{step}.json",
                   _checkpoint_dict(ck, runlog.grid, cfg.variant))


def _aggregate(out: Path, logs: dict[int, RunLog]) -> None:
    n_ep = max((len(r.episodes) for r in logs.values()), default=0)
    seeds = sorted(logs)
    rows = []
    for ep in range(n_ep):
        ret = [logs[s].episodes[ep].total_reward if ep < len(logs[s].episodes) else np.nan
               for s in seeds]
        stp = [logs[s].episodes[ep].steps if ep < len(logs[s].episodes) else np.nan
               for s in seeds]
        rows.append([ep, np.nanmean(ret), np.nanmean(stp), np.sum(np.isfinite(ret))] + ret)
    write_csv(out / "aggregate.csv",
              ["episode", "mean_return", "mean_steps", "n_runs"] + [f"return_seed{s}" for s in seeds],
              rows)


def cmd_online(cfg: ExperimentConfig) -> int:
    env = make_env(cfg.domain, cfg.gamma)
    out = _run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    logs = {}
    status = EXIT_OK
    for seed in cfg.seeds:
        runlog = run(env, cfg.agent_config(seed))
        logs[seed] = runlog
        _save_run(out, seed, cfg, runlog)
        last = runlog.episodes[-1] if runlog.episodes else None
        print(f"{cfg.domain} online variant={cfg.variant} seed={seed} "
              f"episodes={len(runlog.episodes)} "
              f"last_steps={last.steps if last else 'n/a'} "
              f"stopped_at={runlog.stopped_at} seconds={runlog.wall_seconds:.1f}")
        if runlog.error:
            print(f"seed {seed} aborted: {runlog.error}", file=sys.stderr)
            status = EXIT_FAILURE
    _aggregate(out, logs)
    return status


# ---------------------------------------------------------------------------
# snapshot


def _available_steps(run_dir: Path, seed: int) -> list[int]:
    prefix = f"checkpoint_seed{seed}_step"
    return sorted(int(p.stem[len(prefix):]) for p in run_dir.glob(f"{prefix}*.json"))


def cmd_snapshot(run_dir: str | Path, steps: list[int], seed: int = 0) -> int:
    run_dir = Path(run_dir)
    available = _available_steps(run_dir, seed)
    missing = [s for s in steps if s not in available]
    if missing:
        print(f"no checkpoint for step(s) {missing} (seed {seed}); available: {available}",
              file=sys.stderr)
        return EXIT_FAILURE
    samples_path = run_dir / f"samples_seed{seed}.csv"
    samples = (np.loadtxt(samples_path, delimiter=",", skiprows=1, ndmin=2)
               if samples_path.exists() else None)
    for step in steps:
        ck = json.loads((run_dir / f"checkpoint_seed{seed}_step{step}.json").read_text())
        grid = Grid.from_dict(ck["grid"])
        model = DynamicsModel.from_dict(ck["model"])
        q = np.array(ck["q"])
        nodes = grid.nodes()
        names = _state_names(grid.dim)
        _export_value(run_dir / f"snapshot_step{step}_value.csv", q, grid)
        if ck["knownness"] is not None:
            counts = np.array(ck["knownness"])
            cells = counts.shape[0]
            u = (nodes - model.lower) / (model.upper - model.lower)
            idx = tuple(np.clip(np.floor(u * cells).astype(int), 0, cells - 1).T)
            unc = np.stack([np.where(counts[idx + (a,)] >= _threshold(run_dir, seed), 0.0, 1.0)
                            for a in range(model.n_actions)], axis=1)
        else:
            unc = np.stack([model.predict_batch(nodes, a)[1] for a in range(model.n_actions)],
                           axis=1)
        write_csv(run_dir / f"snapshot_step{step}_uncertainty.csv",
                  names + [f"c{a}" for a in range(model.n_actions)],
                  np.column_stack([nodes, unc]))
        dim = grid.dim
        rows = samples[:step] if samples is not None else np.empty((0, 2 * dim + 1))
        write_csv(run_dir / f"snapshot_step{step}_samples.csv",
                  names + ["action"] + [f"next_x{i}" for i in range(dim)], rows)
        print(f"snapshot step={step}: value, uncertainty and {len(rows)} samples written")
    return EXIT_OK


def _threshold(run_dir: Path, seed: int) -> int:
    meta = json.loads((run_dir / f"metadata_seed{seed}.json").read_text())
    return int(meta["config"]["knownness_threshold"])


# ---------------------------------------------------------------------------
# argument handling


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--domain", help="mountain_car, pendulum, bicycle or acrobot")
    p.add_argument("--grid", help="nodes per dimension, e.g. 100x100")
    p.add_argument("--gamma", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--out", help="output directory (default: results)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gprmax", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    off = sub.add_parser("offline", help="plan with the true dynamics")
    _add_common(off)

    for name, help_ in (("online", "learn online with GP-RMAX"),
                        ("run", "run the experiment described by --config / --mode")):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "run":
            p.add_argument("--mode", choices=["offline", "online"])
        p.add_argument("--variant", choices=[v.value for v in Variant])
        p.add_argument("--K", type=int, dest="K")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--episodes", type=int, dest="max_episodes")
        p.add_argument("--checkpoints", type=int, nargs="+",
                       help="sample counts at which model snapshots are stored")

    snap = sub.add_parser("snapshot", help="export value/uncertainty/sample panels")
    snap.add_argument("--run", required=True, help="directory written by `gprmax online`")
    snap.add_argument("--steps", type=int, nargs="+", required=True)
    snap.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {k: getattr(args, k, None) for k in
               ("domain", "gamma", "tol", "max_iters", "out", "variant", "K", "max_episodes",
                "mode")}
    if getattr(args, "grid", None):
        changes["grid"] = parse_grid(args.grid)
    for key in ("seeds", "checkpoints"):
        if getattr(args, key, None):
            changes[key] = tuple(getattr(args, key))
    if args.command in ("offline", "online"):
        changes["mode"] = args.command
    return cfg.override(**changes).validate()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "snapshot":
        return cmd_snapshot(args.run, args.steps, args.seed)
    try:
        cfg = config_from_args(args)
    except (ConfigError, TypeError) as exc:
        print(f"gprmax: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if cfg.mode == "offline":
        return cmd_offline(cfg)
    return cmd_online(cfg)


if __name__ == "__main__":
    sys.exit(main())
