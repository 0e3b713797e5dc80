"""Experiment configuration shared by the command line and the scripts.

A config is a flat JSON object; nested GP settings live under ``"gp"``.
Unknown keys are rejected so typos surface as errors instead of silently
falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .agent import AgentConfig, Variant
from .environments import DOMAINS
from .model import GpConfig


class ConfigError(ValueError):
    pass


def parse_grid(text: str) -> tuple[int, ...]:
    """``"100x100"`` -> ``(100, 100)``; a bare ``"25"`` is not expanded here."""
    try:
        dims = tuple(int(s) for s in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad grid spec {text!r}; expected e.g. 100x100") from None
    if not dims or any(n < 2 for n in dims):
        raise ConfigError(f"grid needs at least 2 nodes per dimension, got {text!r}")
    return dims


@dataclass(frozen=True)
class ExperimentConfig:
    domain: str | None = None
    mode: str = "offline"
    variant: str = "exp"
    # None selects the domain default (100x100, 100x100, 20^4, 25^4)
    grid: tuple[int, ...] | None = None
    gamma: float | None = None
    K: int = 50
    tol: float = 1e-2
    max_iters: int = 500
    delta1: float = 1e-3
    delta2: float = 1e-2
    max_episodes: int = 30
    episode_cap: int | None = None
    knownness_cells: int = 20
    knownness_threshold: int = 1
    seeds: tuple[int, ...] = (0,)
    checkpoints: tuple[int, ...] = ()
    gp: GpConfig = field(default_factory=GpConfig)
    out: str = "results"

    def validate(self) -> "ExperimentConfig":
        if self.domain is None:
            raise ConfigError("a domain is required (--domain)")
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}; choose from {sorted(DOMAINS)}")
        if self.mode not in ("offline", "online"):
            raise ConfigError(f"mode must be offline or online, got {self.mode!r}")
        try:
            Variant(self.variant)
        except ValueError:
            raise ConfigError(f"variant must be one of exp, grid, noexp; got {self.variant!r}") \
                from None
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.tol <= 0 or self.max_iters < 1:
            raise ConfigError("tol must be positive and max_iters at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        dim = len(DOMAINS[self.domain][0]().lower)
        if self.grid is not None and len(self.grid) != dim:
            raise ConfigError(f"{self.domain} has {dim} state dimensions, grid has "
                              f"{len(self.grid)}")
        try:
            self.gp.metric_class
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def agent_config(self, seed: int) -> AgentConfig:
        return AgentConfig(
            variant=Variant(self.variant), K=self.K, delta1=self.delta1, delta2=self.delta2,
            grid=self.grid, tol=self.tol, max_iters=self.max_iters, gp=self.gp, seed=seed,
            max_episodes=self.max_episodes, episode_cap=self.episode_cap,
            knownness_cells=self.knownness_cells, knownness_threshold=self.knownness_threshold,
            checkpoints=self.checkpoints)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("grid", "seeds", "checkpoints"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "gp" in d:
                d["gp"] = GpConfig(**d["gp"])
            if d.get("grid") is not None:
                g = d["grid"]
                d["grid"] = parse_grid(g) if isinstance(g, str) else tuple(int(n) for n in g)
            for key in ("seeds", "checkpoints"):
                if key in d:
                    d[key] = tuple(int(s) for s in d[key])
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(text)

    def override(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
