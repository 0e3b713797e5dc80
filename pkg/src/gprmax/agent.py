"""Online GP-RMAX loop and the offline planning reference."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import planner
from .environments import Environment
from .model import (DynamicsModel, GpConfig, TransitionDataset, model_change, probe_points,
                    update_model)
from .planner import Grid, Mode, PlannerInputs

log = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    EXP = "exp"
    GRID = "grid"
    NOEXP = "noexp"


@dataclass(frozen=True)
class AgentConfig:
    variant: Variant = Variant.EXP
    K: int = 50
    delta1: float = 1e-3
    delta2: float = 1e-2
    grid: tuple[int, ...] | None = None
    tol: float = 1e-2
    max_iters: int = 500
    gp: GpConfig = field(default_factory=GpConfig)
    seed: int = 0
    max_episodes: int = 30
    # None means the domain's own episode length
    episode_cap: int | None = None
    knownness_cells: int = 20
    knownness_threshold: int = 1
    probe_points_per_dim: int = 9
    # sample counts at which a model/Q snapshot is stored
    checkpoints: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.max_episodes < 0:
            raise ValueError("max_episodes must be non-negative")
        if self.knownness_cells < 1 or self.knownness_threshold < 1:
            raise ValueError("knownness grid needs at least one cell and a threshold >= 1")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["grid"] = None if self.grid is None else list(self.grid)
        d["checkpoints"] = list(self.checkpoints)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        d = dict(d)
        d["gp"] = GpConfig(**d.get("gp", {}))
        d["checkpoints"] = tuple(d.get("checkpoints", ()))
        return cls(**d)


class KnownnessGrid:
    """Visit counters on a uniform state x action partition."""

    def __init__(self, lower, upper, n_actions: int, cells: int = 20, threshold: int = 1):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.cells = cells
        self.threshold = threshold
        self.counts = np.zeros((cells,) * len(self.lower) + (n_actions,), dtype=int)

    def cell(self, X) -> tuple[np.ndarray, ...]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u = (X - self.lower) / (self.upper - self.lower)
        idx = np.clip(np.floor(u * self.cells).astype(int), 0, self.cells - 1)
        return tuple(idx.T)

    def visit(self, x, a: int) -> None:
        self.counts[self.cell(x) + (a,)] += 1

    def uncertainty(self, X, a: int) -> np.ndarray:
        known = self.counts[self.cell(X) + (a,)] >= self.threshold
        return np.where(known, 0.0, 1.0)

    def unknown_fraction(self) -> float:
        return float(np.mean(self.counts < self.threshold))


def grid_uncertainty(knownness: KnownnessGrid, x, a: int) -> int:
    """0 if the cell holding ``(x, a)`` has been visited often enough, else 1."""
    return int(knownness.uncertainty(np.asarray(x, dtype=float)[None, :], a)[0])


class EpisodeRecord(NamedTuple):
    episode: int
    steps: int
    total_reward: float
    cumulative_samples: int


class PlanRecord(NamedTuple):
    step: int
    samples: int
    iterations: int
    converged: bool
    delta: float
    fit_seconds: float
    plan_seconds: float


@dataclass
class Checkpoint:
    samples: int
    model: DynamicsModel
    q: np.ndarray
    knownness: np.ndarray | None


@dataclass
class RunLog:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    plans: list[PlanRecord] = field(default_factory=list)
    stopped_at: int | None = None
    error: str | None = None
    wall_seconds: float = 0.0
    checkpoints: dict[int, Checkpoint] = field(default_factory=dict)
    data: TransitionDataset | None = None
    q: np.ndarray | None = None
    grid: Grid | None = None
    model: DynamicsModel | None = None

    @property
    def steps(self) -> list[int]:
        return [e.steps for e in self.episodes]

    @property
    def returns(self) -> list[float]:
        return [e.total_reward for e in self.episodes]

    def timings(self) -> dict[str, float]:
        return {
            "model_fit": sum(p.fit_seconds for p in self.plans),
            "planning": sum(p.plan_seconds for p in self.plans),
            "total": self.wall_seconds,
        }


def _node_rewards(env: Environment, nodes: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return np.stack([env.reward(nodes, a, Z[a]) for a in range(env.n_actions)], axis=1)


class _Planner:
    """Grid, nodes and terminal mask shared by every planning call of a run."""

    def __init__(self, env: Environment, grid: Grid, tol: float, max_iters: int):
        self.env = env
        self.grid = grid
        self.nodes = grid.nodes()
        self.terminal = env.is_terminal(self.nodes)
        self.tol = tol
        self.max_iters = max_iters

    def plan(self, oracle, q0=None, uncertainty=None, mode=Mode.INCREASING_COORDINATE):
        weights, Z, C = planner.build_weights(self.grid, oracle, self.env.n_actions, self.nodes)
        inputs = PlannerInputs(
            rewards=_node_rewards(self.env, self.nodes, Z),
            gamma=self.env.gamma,
            v_max=self.env.v_max,
            uncertainty=C if uncertainty is None else uncertainty,
            terminal=self.terminal,
            terminal_value=self.env.terminal_value,
        )
        return planner.value_iteration(inputs, weights, q0, mode, self.tol, self.max_iters)


def _plan_with_model(p: _Planner, variant: Variant, model: DynamicsModel,
                     knownness: KnownnessGrid | None, q0):
    if variant is Variant.EXP:
        return p.plan(model.predict_batch, q0, mode=Mode.UNCERTAINTY_AUGMENTED)
    if variant is Variant.GRID:
        unc = np.stack([knownness.uncertainty(p.nodes, a) for a in range(model.n_actions)], 1)
        return p.plan(model.predict_batch, q0, uncertainty=unc,
                      mode=Mode.UNCERTAINTY_AUGMENTED)
    return p.plan(model.predict_batch, q0, mode=Mode.INCREASING_COORDINATE)


def _update_seed(seed: int, samples: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, samples])


def run(env: Environment, config: AgentConfig) -> RunLog:
    """Run GP-RMAX for ``config.max_episodes`` episodes.

    The model and plan are refreshed at global step 0 and then every ``K``
    environment steps, until the stopping criterion fires. Failures inside
    model fitting or planning end the run early; the partial log is returned
    with ``error`` set.
    """
    t_start = time.perf_counter()
    grid = Grid.for_env(env, config.grid)
    p = _Planner(env, grid, config.tol, config.max_iters)
    data = TransitionDataset(env.dim, env.n_actions)
    model = DynamicsModel.empty(env)
    knownness = (KnownnessGrid(env.lower, env.upper, env.n_actions, config.knownness_cells,
                               config.knownness_threshold)
                 if config.variant is Variant.GRID else None)
    probes = probe_points(env.lower, env.upper, config.probe_points_per_dim)
    runlog = RunLog(data=data, grid=grid)
    q = None
    stopped = False
    cap = config.episode_cap or env.max_steps
    pending_checkpoints = sorted(set(config.checkpoints))
    t = 0

    def refresh():
        nonlocal model, q, stopped
        t0 = time.perf_counter()
        new_model = update_model(model, data, config.gp, _update_seed(config.seed, t))
        t1 = time.perf_counter()
        if t > 0 and len(data) > 0:
            dz, dc = model_change(new_model, model, probes)
            if dz < config.delta1 and dc < config.delta2:
                # model has settled: keep the current model and plan from now on
                stopped = True
                runlog.stopped_at = t
                log.info("stopping criterion met at step %d", t)
                return
        model = new_model
        res = _plan_with_model(p, config.variant, model, knownness, q)
        q = res.q
        t2 = time.perf_counter()
        runlog.plans.append(PlanRecord(t, len(data), res.iterations, res.converged,
                                       res.delta, t1 - t0, t2 - t1))

    def checkpoint():
        # refit on the samples so far without touching the running model
        ck_model = update_model(model, data, config.gp, _update_seed(config.seed, t))
        ck_q = _plan_with_model(p, config.variant, ck_model, knownness, q).q
        runlog.checkpoints[t] = Checkpoint(
            t, ck_model, ck_q, None if knownness is None else knownness.counts.copy())

    try:
        for ep in range(config.max_episodes):
            x = env.start_state(ep)
            total = 0.0
            steps = 0
            for _ in range(cap):
                if pending_checkpoints and pending_checkpoints[0] == t:
                    pending_checkpoints.pop(0)
                    checkpoint()
                if t % config.K == 0 and not stopped:
                    refresh()
                a = planner.greedy_action(q, grid, x)
                x_next, r, done = env.step(x, a)
                data.append(x, a, x_next)
                if knownness is not None:
                    knownness.visit(x, a)
                total += r
                steps += 1
                t += 1
                x = x_next
                if done:
                    break
            runlog.episodes.append(EpisodeRecord(ep, steps, total, t))
            log.info("episode %d: %d steps, return %.3f", ep, steps, total)
        if pending_checkpoints and pending_checkpoints[0] == t:
            checkpoint()
    except (planner.PlannerDivergence, np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        runlog.error = f"{type(exc).__name__}: {exc}"
        log.error("run aborted at step %d: %s", t, runlog.error)

    runlog.q = q
    runlog.model = model
    runlog.wall_seconds = time.perf_counter() - t_start
    return runlog


class Rollout(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    reached_terminal: bool

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


class OfflineResult(NamedTuple):
    q: np.ndarray
    grid: Grid
    plan: planner.PlanResult
    rollout: Rollout
    seconds: float


def rollout(env: Environment, q: np.ndarray, grid: Grid, x0=None, max_steps: int | None = None,
            episode: int = 0) -> Rollout:
    """Follow the greedy policy of ``q`` on the true dynamics."""
    x = env.start_state(episode) if x0 is None else np.asarray(x0, dtype=float)
    states, actions, rewards = [x], [], []
    done = False
    for _ in range(max_steps or env.max_steps):
        a = planner.greedy_action(q, grid, x)
        x, r, done = env.step(x, a)
        states.append(x)
        actions.append(a)
        rewards.append(r)
        if done:
            break
    return Rollout(np.array(states), np.array(actions, dtype=int), np.array(rewards), done)


def offline_plan(env: Environment, grid: Grid | tuple[int, ...] | None = None, tol: float = 1e-2,
                 max_iters: int = 500, mode: Mode | str = Mode.INCREASING_COORDINATE,
                 episode: int = 0) -> OfflineResult:
    """Plan with the true dynamics and roll the greedy policy out from the start state."""
    t0 = time.perf_counter()
    if not isinstance(grid, Grid):
        grid = Grid.for_env(env, grid)
    p = _Planner(env, grid, tol, max_iters)
    res = p.plan(lambda X, a: (env.transition(X, a), 0.0), mode=mode)
    ro = rollout(env, res.q, grid, episode=episode)
    return OfflineResult(res.q, grid, res, ro, time.perf_counter() - t0)
