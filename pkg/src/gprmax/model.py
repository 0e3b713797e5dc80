"""Transition model built from one univariate GP per (state dimension, action).

Each GP maps the current state to the change of one coordinate under one
action. Stacking the means gives the predicted successor; the per-coordinate
variances, divided by the GP's prior variance, give a normalized
uncertainty whose maximum over coordinates is the model's uncertainty
``c(x, a)`` in ``[0, 1]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import gp

log = logging.getLogger(__name__)

__all__ = [
    "TransitionDataset",
    "GpConfig",
    "DynamicsModel",
    "ModelPrediction",
    "update_model",
    "stopping_criterion",
    "probe_points",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = 1


class TransitionDataset:
    """Append-only store of observed ``(x, a, x_next)`` triplets."""

    def __init__(self, dim: int, n_actions: int):
        self.dim = dim
        self.n_actions = n_actions
        self._x: list[np.ndarray] = []
        self._a: list[int] = []
        self._xn: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._a)

    def append(self, x, a: int, x_next) -> None:
        if not 0 <= a < self.n_actions:
            raise ValueError(f"action index {a} out of range")
        self._x.append(np.array(x, dtype=float))
        self._a.append(int(a))
        self._xn.append(np.array(x_next, dtype=float))

    @property
    def states(self) -> np.ndarray:
        return np.array(self._x).reshape(-1, self.dim)

    @property
    def actions(self) -> np.ndarray:
        return np.array(self._a, dtype=int)

    @property
    def next_states(self) -> np.ndarray:
        return np.array(self._xn).reshape(-1, self.dim)

    def for_action(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.actions == a
        return self.states[mask], self.next_states[mask]

    def head(self, n: int) -> "TransitionDataset":
        out = TransitionDataset(self.dim, self.n_actions)
        out._x, out._a, out._xn = self._x[:n], self._a[:n], self._xn[:n]
        return out

    def to_rows(self) -> np.ndarray:
        """``(n, 2d + 1)`` rows of state, action index, next state."""
        return np.column_stack([self.states, self.actions, self.next_states])

    @classmethod
    def from_rows(cls, rows, dim: int, n_actions: int) -> "TransitionDataset":
        out = cls(dim, n_actions)
        for r in np.atleast_2d(rows):
            out.append(r[:dim], int(r[dim]), r[dim + 1:])
        return out


@dataclass(frozen=True)
class GpConfig:
    metric: str = "ard"
    max_subset: int = 1000
    icd_tol: float = 1e-2
    subsample_size: int = 500
    restarts: int = 4
    # later updates start from the previous hyperparameters
    warm_restarts: int = 1
    noise: float = gp.NOISE_FLOOR

    @property
    def metric_class(self) -> type:
        kinds = {"ard": gp.ArdDiagonal, "uniform": gp.Uniform,
                 "factor_analysis": gp.FactorAnalysis}
        try:
            return kinds[self.metric]
        except KeyError:
            raise ValueError(f"unknown metric {self.metric!r}") from None


class ModelPrediction(NamedTuple):
    successor: np.ndarray
    uncertainty: float


class DynamicsModel:
    """Immutable grid of per-(dimension, action) GP predictors.

    ``gps[i][a]`` is None when no transition under action ``a`` has been
    observed; such actions predict no change with uncertainty 1.
    """

    def __init__(self, lower, upper, periodic, n_actions: int,
                 gps=None, degraded=None):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.periodic = tuple(bool(p) for p in periodic)
        self.n_actions = n_actions
        d = len(self.lower)
        self.gps: list[list[gp.GpPredictor | None]] = (
            gps if gps is not None else [[None] * n_actions for _ in range(d)])
        self.degraded = degraded if degraded is not None else [[False] * n_actions
                                                                for _ in range(d)]

    @classmethod
    def empty(cls, env) -> "DynamicsModel":
        return cls(env.lower, env.upper, env.periodic, env.n_actions)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def trained_counts(self) -> list[list[int]]:
        return [[0 if g is None else g.n_train for g in row] for row in self.gps]

    @property
    def prior_variance(self) -> list[list[float | None]]:
        return [[None if g is None else g.prior_variance for g in row] for row in self.gps]

    def is_fitted(self, a: int) -> bool:
        return all(self.gps[i][a] is not None for i in range(self.dim))

    def bound(self, Z: np.ndarray) -> np.ndarray:
        Z = np.array(Z, dtype=float, copy=True)
        for i in range(self.dim):
            lo, hi = self.lower[i], self.upper[i]
            if self.periodic[i]:
                Z[:, i] = (Z[:, i] - lo) % (hi - lo) + lo
            else:
                Z[:, i] = np.clip(Z[:, i], lo, hi)
        return Z

    def dimension_uncertainty(self, X, a: int) -> np.ndarray:
        """Normalized variance per state dimension, shape ``(d, M)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.ones((self.dim, len(X)))
        for i in range(self.dim):
            g = self.gps[i][a]
            if g is not None:
                out[i] = np.clip(g.normalized_variance(X), 0.0, 1.0)
        return out

    def predict_batch(self, X, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Successors ``(M, d)`` and uncertainties ``(M,)`` for one action."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = X.copy()
        unc = np.zeros(len(X))
        for i in range(self.dim):
            g = self.gps[i][a]
            if g is None:
                unc[:] = 1.0
                continue
            mean, var = g.predict(X)
            Z[:, i] += mean
            unc = np.maximum(unc, np.clip(var / g.prior_variance, 0.0, 1.0))
        return self.bound(Z), unc

    def predict(self, x, a: int) -> ModelPrediction:
        Z, c = self.predict_batch(np.asarray(x, dtype=float)[None, :], a)
        return ModelPrediction(Z[0], float(c[0]))

    __call__ = predict_batch

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "periodic": list(self.periodic),
            "n_actions": self.n_actions,
            "degraded": self.degraded,
            "gps": [[None if g is None else g.to_dict() for g in row] for row in self.gps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')}")
        gps = [[None if g is None else gp.GpPredictor.from_dict(g) for g in row]
               for row in d["gps"]]
        return cls(d["lower"], d["upper"], d["periodic"], d["n_actions"], gps, d["degraded"])


def coordinate_change(model_or_env, X, Xn) -> np.ndarray:
    """``Xn - X`` with periodic coordinates wrapped to the short way round."""
    D = np.asarray(Xn, dtype=float) - np.asarray(X, dtype=float)
    lower, upper = np.asarray(model_or_env.lower), np.asarray(model_or_env.upper)
    for i, per in enumerate(model_or_env.periodic):
        if per:
            w = upper[i] - lower[i]
            D[:, i] = (D[:, i] + 0.5 * w) % w - 0.5 * w
    return D


def update_model(model: DynamicsModel, data: TransitionDataset, config: GpConfig | None = None,
                 seed=None) -> DynamicsModel:
    """Refit every GP on all transitions seen so far.

    Hyperparameters are re-optimized each time, starting from the previous
    model's values when available.
    """
    config = config or GpConfig()
    rng = np.random.default_rng(seed)
    d = model.dim
    gps = [[None] * model.n_actions for _ in range(d)]
    degraded = [[False] * model.n_actions for _ in range(d)]
    kind = config.metric_class
    for a in range(model.n_actions):
        X, Xn = data.for_action(a)
        if len(X) == 0:
            continue
        D = coordinate_change(model, X, Xn)
        for i in range(d):
            rd = gp.RegressionData(X, D[:, i], model.lower, model.upper)
            prev = model.gps[i][a]
            init = prev.hyperparams if prev is not None else None
            restarts = config.warm_restarts if init is not None else config.restarts
            hf = gp.optimize_hyperparams(rd, kind, config.subsample_size, restarts,
                                         seed=rng.integers(2**32), init=init,
                                         noise=config.noise)
            degraded[i][a] = hf.degraded
            if hf.degraded:
                log.warning("degraded hyperparameter fit for dimension %d, action %d", i, a)
            gps[i][a] = gp.fit(rd, hf.hyperparams, config.max_subset, config.icd_tol,
                               config.noise)
    return DynamicsModel(model.lower, model.upper, model.periodic, model.n_actions, gps,
                         degraded)


def probe_points(lower, upper, points_per_dim: int = 9) -> np.ndarray:
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def model_change(new: DynamicsModel, old: DynamicsModel, points) -> tuple[float, float]:
    """Largest successor change (normalized state units) and uncertainty change."""
    width = new.upper - new.lower
    dz = dc = 0.0
    for a in range(new.n_actions):
        z1, c1 = new.predict_batch(points, a)
        z0, c0 = old.predict_batch(points, a)
        diff = coordinate_change(new, z0, z1) / width
        dz = max(dz, float(np.abs(diff).max()))
        dc = max(dc, float(np.abs(c1 - c0).max()))
    return dz, dc


def stopping_criterion(model_new: DynamicsModel, model_old: DynamicsModel, points,
                       delta1: float = 1e-3, delta2: float = 1e-2) -> bool:
    """True once predictions and uncertainties both stopped moving."""
    points = np.atleast_2d(points)
    if len(points) == 0:
        raise ValueError("need at least one test point")
    dz, dc = model_change(model_new, model_old, points)
    return dz < delta1 and dc < delta2
