"""Univariate GP regression with a sparse subset-of-regressors predictor.

Covariance is the squared exponential with a constant offset,

    k(x, x') = v0 * exp(-0.5 (x - x')^T Omega (x - x')) + b,

where Omega is ``theta * I`` (:class:`Uniform`), ``diag(theta)``
(:class:`ArdDiagonal`) or ``M M^T`` (:class:`FactorAnalysis`, evaluation
only).

Training picks an active set by greedy pivoted (incomplete) Cholesky of the
Gram matrix. The mean uses the subset-of-regressors approximation and the
variance the projected-process approximation, which does not collapse to
zero away from the active set.

Low-level routines (:func:`kernel_matrix`, :func:`icd_select`,
:func:`neg_log_marginal_likelihood`, :func:`optimize_hyperparams`) work on
arrays in whatever units they are given. :func:`fit` takes a
:class:`RegressionData`, scales inputs to the unit box and standardizes the
targets, and returns a :class:`GpPredictor` that answers in original units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.optimize

log = logging.getLogger(__name__)

__all__ = [
    "Uniform",
    "ArdDiagonal",
    "FactorAnalysis",
    "KernelHyperparams",
    "RegressionData",
    "GpPredictor",
    "GpNumericalError",
    "HyperFit",
    "kernel_eval",
    "kernel_matrix",
    "icd_select",
    "pivoted_cholesky",
    "fit",
    "predict",
    "neg_log_marginal_likelihood",
    "optimize_hyperparams",
    "default_hyperparams",
    "NOISE_FLOOR",
]

NOISE_FLOOR = 1e-6
JITTER_LEVELS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)

LOG_V0_BOUNDS = (-6.0, 6.0)
LOG_BIAS_BOUNDS = (-10.0, 2.0)
LOG_THETA_BOUNDS = (-8.0, 8.0)


class GpNumericalError(np.linalg.LinAlgError):
    """Cholesky failed at every jitter level."""

    def __init__(self, msg: str, jitters=()):
        super().__init__(f"{msg} (jitter levels tried: {list(jitters)})")
        self.jitters = tuple(jitters)


@dataclass(frozen=True)
class Uniform:
    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")


@dataclass(frozen=True)
class ArdDiagonal:
    theta: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if any(not t > 0 for t in self.theta):
            raise ValueError("all theta must be positive")


@dataclass(frozen=True)
class FactorAnalysis:
    """Omega = M M^T. Only evaluation is supported."""

    factors: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(tuple(float(v) for v in row)
                                                  for row in np.atleast_2d(self.factors)))


Metric = Union[Uniform, ArdDiagonal, FactorAnalysis]


@dataclass(frozen=True)
class KernelHyperparams:
    signal_variance: float
    bias: float
    metric: Metric

    def __post_init__(self):
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.bias >= 0:
            raise ValueError("bias must be nonnegative")

    @property
    def prior_variance(self) -> float:
        """k(x, x), identical for every x."""
        return self.signal_variance + self.bias

    def input_dim(self) -> int | None:
        m = self.metric
        if isinstance(m, ArdDiagonal):
            return len(m.theta)
        if isinstance(m, FactorAnalysis):
            return len(m.factors)
        return None

    def log_params(self) -> np.ndarray:
        m = self.metric
        if isinstance(m, Uniform):
            theta = [m.theta]
        elif isinstance(m, ArdDiagonal):
            theta = list(m.theta)
        else:
            raise NotImplementedError("factor-analysis hyperparameters are not optimized")
        # bias is log-parameterized; an exact zero maps to the lower bound
        b = max(self.bias, math.exp(LOG_BIAS_BOUNDS[0]))
        return np.log([self.signal_variance, b] + theta)

    @classmethod
    def from_log_params(cls, p, kind: type) -> "KernelHyperparams":
        p = np.exp(np.asarray(p, dtype=float))
        if kind is Uniform:
            metric = Uniform(float(p[2]))
        elif kind is ArdDiagonal:
            metric = ArdDiagonal(tuple(p[2:]))
        else:
            raise NotImplementedError("factor-analysis hyperparameters are not optimized")
        return cls(float(p[0]), float(p[1]), metric)

    def to_dict(self) -> dict:
        m = self.metric
        if isinstance(m, Uniform):
            metric = {"kind": "uniform", "theta": m.theta}
        elif isinstance(m, ArdDiagonal):
            metric = {"kind": "ard", "theta": list(m.theta)}
        else:
            metric = {"kind": "factor_analysis", "factors": [list(r) for r in m.factors]}
        return {"signal_variance": self.signal_variance, "bias": self.bias, "metric": metric}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelHyperparams":
        m = d["metric"]
        if m["kind"] == "uniform":
            metric = Uniform(m["theta"])
        elif m["kind"] == "ard":
            metric = ArdDiagonal(tuple(m["theta"]))
        else:
            metric = FactorAnalysis(tuple(tuple(r) for r in m["factors"]))
        return cls(d["signal_variance"], d["bias"], metric)


def default_hyperparams(dim: int, kind: type = ArdDiagonal) -> KernelHyperparams:
    """Starting point for standardized targets on unit-box inputs."""
    theta = 1.0 / 0.3**2
    metric = Uniform(theta) if kind is Uniform else ArdDiagonal((theta,) * dim)
    return KernelHyperparams(1.0, 1e-2, metric)


def _check_dim(X: np.ndarray, h: KernelHyperparams):
    d = h.input_dim()
    if d is not None and X.shape[-1] != d:
        raise ValueError(f"input dimension {X.shape[-1]} does not match metric dimension {d}")


def _scaled_sqdist(X1: np.ndarray, X2: np.ndarray, metric: Metric) -> np.ndarray:
    """(x - x')^T Omega (x - x') for all pairs."""
    if isinstance(metric, FactorAnalysis):
        M = np.asarray(metric.factors)
        A, B = X1 @ M, X2 @ M
    else:
        s = np.sqrt(np.broadcast_to(np.asarray(metric.theta, dtype=float), (X1.shape[1],)))
        A, B = X1 * s, X2 * s
    d2 = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def kernel_matrix(X1, X2, h: KernelHyperparams) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != X2.shape[1]:
        raise ValueError("inputs have different dimensions")
    _check_dim(X1, h)
    K = h.signal_variance * np.exp(-0.5 * _scaled_sqdist(X1, X2, h.metric)) + h.bias
    if X1 is X2:
        # symmetric up to rounding of the expanded square
        K = 0.5 * (K + K.T)
    return K


def kernel_eval(x, x2, h: KernelHyperparams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    _check_dim(x[None, :], h)
    diff = x - x2
    m = h.metric
    if isinstance(m, FactorAnalysis):
        proj = diff @ np.asarray(m.factors)
        q = float(proj @ proj)
    else:
        q = float(np.sum(np.asarray(m.theta) * diff**2))
    return h.signal_variance * math.exp(-0.5 * q) + h.bias


@dataclass
class RegressionData:
    """Training inputs and targets in original units.

    ``lower``/``upper`` fix the input box mapped onto ``[0, 1]^m``; they
    default to the data range.
    """

    X: np.ndarray
    y: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[0] == 1 and np.ndim(self.y) == 1 and len(self.y) > 1:
            self.X = self.X.T
        self.y = np.asarray(self.y, dtype=float).ravel()
        if len(self.X) != len(self.y):
            raise ValueError("X and y must have the same number of rows")
        if len(self.y) == 0:
            raise ValueError("regression data must be nonempty")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("regression data must be finite")
        lo = self.X.min(0) if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = self.X.max(0) if self.upper is None else np.asarray(self.upper, dtype=float)
        self.lower = lo
        self.upper = hi

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def x_scale(self) -> np.ndarray:
        width = self.upper - self.lower
        return np.where(width > 0, width, 1.0)

    @property
    def y_mean(self) -> float:
        return float(self.y.mean())

    @property
    def y_std(self) -> float:
        s = float(self.y.std())
        return s if s > 1e-12 * max(1.0, abs(self.y_mean)) else 1.0

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.X - self.lower) / self.x_scale, (self.y - self.y_mean) / self.y_std


def pivoted_cholesky(X, h: KernelHyperparams, tol: float, max_size: int):
    """Greedy incomplete Cholesky of the Gram matrix of ``X``.

    Returns ``(pivots, G)`` with ``G`` of shape ``(n, len(pivots))`` such
    that ``G @ G.T`` approximates the Gram matrix. Stops once the largest
    residual diagonal is ``<= tol`` or ``max_size`` pivots were taken.
    """
    if max_size < 1:
        raise ValueError("max_size must be at least 1")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    max_size = min(max_size, n)
    resid = np.full(n, h.prior_variance)
    G = np.zeros((n, max_size))
    pivots: list[int] = []
    for k in range(max_size):
        j = int(np.argmax(resid))
        if resid[j] <= tol or (k > 0 and resid[j] <= 0.0):
            break
        pivots.append(j)
        col = kernel_matrix(X, X[j:j + 1], h)[:, 0]
        G[:, k] = (col - G[:, :k] @ G[j, :k]) / math.sqrt(resid[j])
        resid = np.maximum(resid - G[:, k] ** 2, 0.0)
        resid[pivots] = 0.0
    return pivots, G[:, :len(pivots)]


def icd_select(data, h: KernelHyperparams, tol: float, max_size: int) -> list[int]:
    """Active-set indices in selection order (see :func:`pivoted_cholesky`)."""
    X = data.normalized()[0] if isinstance(data, RegressionData) else data
    return pivoted_cholesky(X, h, tol, max_size)[0]


def _cholesky(A: np.ndarray, what: str):
    """Cholesky with escalating diagonal jitter; returns ``(L, jitter)``."""
    tried = []
    eye = np.eye(len(A))
    for jit in JITTER_LEVELS:
        tried.append(jit)
        try:
            return sla.cholesky(A + jit * eye if jit else A, lower=True), jit
        except np.linalg.LinAlgError:
            continue
    raise GpNumericalError(f"{what} is not positive definite", tried)


@dataclass(frozen=True)
class GpPredictor:
    """Trained sparse GP; immutable and safe to query concurrently."""

    hyperparams: KernelHyperparams
    active_set: tuple[int, ...]
    active_inputs: np.ndarray  # normalized units
    alpha: np.ndarray
    chol_active: np.ndarray
    chol_projected: np.ndarray
    noise: float
    jitter: float
    x_lower: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_std: float
    n_train: int

    @property
    def prior_variance(self) -> float:
        """k(x, x) in original target units."""
        return self.hyperparams.prior_variance * self.y_std**2

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and latent variance at ``X`` (original units)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.active_inputs.shape[1]:
            raise ValueError(f"query dimension {X.shape[1]} does not match "
                             f"training dimension {self.active_inputs.shape[1]}")
        mean, var = self._predict_normalized((X - self.x_lower) / self.x_scale)
        return self.y_mean + self.y_std * mean, var * self.y_std**2

    def normalized_variance(self, X) -> np.ndarray:
        """sigma^2(x) / k(x, x), in [0, 1]."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _, var = self._predict_normalized((X - self.x_lower) / self.x_scale)
        return var / self.hyperparams.prior_variance

    def _predict_normalized(self, Xn):
        h = self.hyperparams
        Kqm = kernel_matrix(Xn, self.active_inputs, h)
        mean = Kqm @ self.alpha
        V1 = sla.solve_triangular(self.chol_active, Kqm.T, lower=True, check_finite=False)
        V2 = sla.solve_triangular(self.chol_projected, V1, lower=True, check_finite=False)
        var = h.prior_variance - (V1**2).sum(0) + self.noise * (V2**2).sum(0)
        return mean, np.clip(var, 0.0, h.prior_variance)

    def to_dict(self) -> dict:
        return {
            "hyperparams": self.hyperparams.to_dict(),
            "active_set": list(self.active_set),
            "active_inputs": self.active_inputs.tolist(),
            "alpha": self.alpha.tolist(),
            "chol_active": self.chol_active.tolist(),
            "chol_projected": self.chol_projected.tolist(),
            "noise": self.noise,
            "jitter": self.jitter,
            "x_lower": self.x_lower.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "n_train": self.n_train,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpPredictor":
        arr = lambda k: np.asarray(d[k], dtype=float)
        m = len(d["active_set"])
        return cls(
            hyperparams=KernelHyperparams.from_dict(d["hyperparams"]),
            active_set=tuple(d["active_set"]),
            active_inputs=arr("active_inputs").reshape(m, -1),
            alpha=arr("alpha"),
            chol_active=arr("chol_active").reshape(m, m),
            chol_projected=arr("chol_projected").reshape(m, m),
            noise=d["noise"], jitter=d["jitter"],
            x_lower=arr("x_lower"), x_scale=arr("x_scale"),
            y_mean=d["y_mean"], y_std=d["y_std"], n_train=d["n_train"],
        )


def fit(data: RegressionData, h: KernelHyperparams, max_subset: int = 1000,
        icd_tol: float = 1e-2, noise: float = NOISE_FLOOR) -> GpPredictor:
    """Train the subset-of-regressors / projected-process predictor.

    Hyperparameters refer to normalized units (unit-box inputs,
    standardized targets); so is ``icd_tol``, the residual-variance threshold
    for active-set selection.
    """
    Xn, yn = data.normalized()
    _check_dim(Xn, h)
    pivots = pivoted_cholesky(Xn, h, icd_tol, max_subset)[0]
    Xm = Xn[pivots]
    Kmm = kernel_matrix(Xm, Xm, h)
    Kmn = kernel_matrix(Xm, Xn, h)
    L, jitter = _cholesky(Kmm, "active-set kernel matrix")
    V = sla.solve_triangular(L, Kmn, lower=True, check_finite=False)
    B = noise * np.eye(len(pivots)) + V @ V.T
    LB, jb = _cholesky(B, "projected system")
    beta = sla.solve_triangular(LB, V @ yn, lower=True, check_finite=False)
    alpha = sla.solve_triangular(L.T, sla.solve_triangular(LB.T, beta, lower=False),
                                 lower=False)
    return GpPredictor(
        hyperparams=h,
        active_set=tuple(int(p) for p in pivots),
        active_inputs=Xm,
        alpha=alpha,
        chol_active=L,
        chol_projected=LB,
        noise=noise,
        jitter=max(jitter, jb),
        x_lower=np.asarray(data.lower, dtype=float),
        x_scale=data.x_scale,
        y_mean=data.y_mean,
        y_std=data.y_std,
        n_train=data.n,
    )


def predict(p: GpPredictor, x) -> tuple[float, float]:
    mean, var = p.predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return float(mean[0]), float(var[0])


def _sqdiff_per_dim(X: np.ndarray) -> np.ndarray:
    return (X[:, None, :] - X[None, :, :]) ** 2


def _nlml_from_sqdiff(D2: np.ndarray, y: np.ndarray, h: KernelHyperparams,
                      noise: float) -> tuple[float, np.ndarray]:
    n = len(y)
    m = h.metric
    theta = np.broadcast_to(np.asarray(m.theta, dtype=float), (D2.shape[-1],))
    E = np.exp(-0.5 * D2 @ theta)
    K = h.signal_variance * E + h.bias
    K[np.diag_indices(n)] += noise
    L, _ = _cholesky(K, "kernel matrix")
    alpha = sla.cho_solve((L, True), y, check_finite=False)
    value = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * math.log(2 * math.pi)
    Kinv, info = sla.lapack.dpotri(L, lower=1)
    if info != 0:
        raise GpNumericalError("could not invert kernel matrix")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    Wm = np.outer(alpha, alpha) - Kinv
    WvE = Wm * (h.signal_variance * E)
    grads = [-0.5 * WvE.sum(),
             -0.5 * max(h.bias, math.exp(LOG_BIAS_BOUNDS[0])) * Wm.sum()]
    per_dim = 0.25 * theta * np.einsum("ij,ijk->k", WvE, D2)
    if isinstance(m, Uniform):
        grads.append(per_dim.sum())
    else:
        grads.extend(per_dim)
    return float(value), np.asarray(grads)


def neg_log_marginal_likelihood(X, y, h: KernelHyperparams,
                                noise: float = NOISE_FLOOR) -> tuple[float, np.ndarray]:
    """Dense negative log marginal likelihood and its gradient.

    The gradient is taken with respect to ``h.log_params()``:
    ``[log v0, log b, log theta_1, ...]``.
    """
    if isinstance(X, RegressionData):
        X, y = X.normalized()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("need at least one observation")
    if isinstance(h.metric, FactorAnalysis):
        raise NotImplementedError("factor-analysis likelihood gradient is not implemented")
    _check_dim(X, h)
    return _nlml_from_sqdiff(_sqdiff_per_dim(X), y, h, noise)


class HyperFit(NamedTuple):
    hyperparams: KernelHyperparams
    nlml: float
    degraded: bool


def optimize_hyperparams(data, metric_variant: type = ArdDiagonal, subsample_size: int = 500,
                         restarts: int = 4, seed=None, init: KernelHyperparams | None = None,
                         noise: float = NOISE_FLOOR, y=None) -> HyperFit:
    """Minimize the negative log marginal likelihood over log-hyperparameters.

    ``data`` is a :class:`RegressionData` (optimized in normalized units) or
    an input array with targets passed as ``y``. Likelihoods are evaluated on
    one random subset of at most ``subsample_size`` points. The first start
    is ``init`` (or the default), the remaining ``restarts - 1`` starts are
    random. If every start fails numerically the default is returned with
    ``degraded=True``.
    """
    if metric_variant is FactorAnalysis:
        raise NotImplementedError("factor-analysis metric cannot be optimized")
    if isinstance(data, RegressionData):
        X, yv = data.normalized()
    else:
        X, yv = np.atleast_2d(np.asarray(data, dtype=float)), np.asarray(y, dtype=float)
    n, dim = X.shape
    rng = np.random.default_rng(seed)
    if n > subsample_size:
        if subsample_size < 2:
            raise ValueError("subsample_size must be at least 2")
        idx = np.sort(rng.choice(n, subsample_size, replace=False))
        X, yv = X[idx], yv[idx]

    default = default_hyperparams(dim, metric_variant)
    first = init if init is not None and isinstance(init.metric, metric_variant) else default
    n_theta = 1 if metric_variant is Uniform else dim
    bounds = [LOG_V0_BOUNDS, LOG_BIAS_BOUNDS] + [LOG_THETA_BOUNDS] * n_theta
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    starts = [np.clip(first.log_params(), lo, hi)]
    for _ in range(max(restarts, 1) - 1):
        starts.append(np.concatenate([rng.uniform(-1.0, 1.0, 1), rng.uniform(-6.0, -1.0, 1),
                                      rng.uniform(0.0, 5.0, n_theta)]))

    D2 = _sqdiff_per_dim(X)

    def objective(p):
        hp = KernelHyperparams.from_log_params(p, metric_variant)
        return _nlml_from_sqdiff(D2, yv, hp, noise)

    best_p, best_val = None, np.inf
    for p0 in starts:
        try:
            res = scipy.optimize.minimize(objective, p0, jac=True, method="L-BFGS-B",
                                          bounds=bounds)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            log.debug("restart failed: %s", exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_p, best_val = res.x, float(res.fun)
    if best_p is None:
        log.warning("hyperparameter optimization failed on all %d starts", len(starts))
        return HyperFit(default, np.nan, True)
    return HyperFit(KernelHyperparams.from_log_params(best_p, metric_variant), best_val, False)
