"""Grid discretization, multilinear interpolation and value iteration.

The Q-function is stored as a ``(N, |A|)`` array holding one value per grid
node and action. Off-node values are obtained by d-linear interpolation over
the enclosing cell, so the discretized Bellman operator becomes

    Q[:, a] <- R[:, a] + gamma * max_a' (W[a] @ Q[:, a'])

with ``W[a]`` a sparse row-stochastic matrix of interpolation weights of the
successors of every node under action ``a``.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "Grid",
    "SparseWeights",
    "PlannerInputs",
    "PlanResult",
    "Mode",
    "PlannerDivergence",
    "interpolation_weights",
    "build_weights",
    "value_iteration",
    "bellman_plain",
    "interpolate_q",
    "greedy_action",
]


class PlannerDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform grid over a hyperrectangle.

    Node ``k`` along dimension ``i`` sits at ``lower[i] + k * h[i]``. On a
    periodic dimension ``upper`` is identified with ``lower`` and there are
    ``nodes_per_dim[i]`` distinct nodes spaced ``(upper - lower) / n``
    apart. Flat node indices are row-major (C order): the last dimension
    varies fastest.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    nodes_per_dim: tuple[int, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "nodes_per_dim", tuple(int(n) for n in self.nodes_per_dim))
        if self.periodic is None:
            object.__setattr__(self, "periodic", (False,) * len(self.lower))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        d = len(self.lower)
        if not (len(self.upper) == len(self.nodes_per_dim) == len(self.periodic) == d):
            raise ValueError("grid fields must have equal length")
        if any(n < 2 for n in self.nodes_per_dim):
            raise ValueError("need at least 2 nodes per dimension")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("upper bounds must exceed lower bounds")

    @classmethod
    def for_env(cls, env, nodes_per_dim=None) -> "Grid":
        return cls(tuple(env.lower), tuple(env.upper),
                   tuple(nodes_per_dim or env.default_grid), tuple(env.periodic))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes_per_dim

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.nodes_per_dim))

    @property
    def spacing(self) -> np.ndarray:
        lo, hi, n = np.array(self.lower), np.array(self.upper), np.array(self.nodes_per_dim)
        per = np.array(self.periodic)
        return (hi - lo) / np.where(per, n, n - 1)

    def axes(self) -> list[np.ndarray]:
        # linspace pins the last node of a bounded axis exactly on the upper bound
        return [np.linspace(lo, hi, n, endpoint=not per)
                for lo, hi, n, per in zip(self.lower, self.upper, self.nodes_per_dim,
                                          self.periodic)]

    def nodes(self) -> np.ndarray:
        """All node coordinates, ``(N, d)``, in flat-index order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def flat_index(self, multi_index) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(multi_index).T), self.shape)

    def multi_index(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def bound(self, Z: np.ndarray) -> np.ndarray:
        """Clamp (bounded dims) or wrap (periodic dims) states into the domain."""
        Z = np.array(Z, dtype=float, copy=True)
        for i in range(self.dim):
            lo, hi = self.lower[i], self.upper[i]
            if self.periodic[i]:
                Z[..., i] = (Z[..., i] - lo) % (hi - lo) + lo
            else:
                Z[..., i] = np.clip(Z[..., i], lo, hi)
        return Z

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper),
                "nodes_per_dim": list(self.nodes_per_dim), "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["lower"]), tuple(d["upper"]), tuple(d["nodes_per_dim"]),
                   tuple(d["periodic"]))


_SNAP = 1e-12


def _corner_weights(grid: Grid, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices and d-linear weights of the 2^d cell vertices, ``(M, 2^d)`` each.

    Repeated vertices (periodic grids with two nodes) are not merged here.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if np.isnan(Z).any():
        raise ValueError("NaN coordinate passed to interpolation")
    if Z.shape[1] != grid.dim:
        raise ValueError(f"expected {grid.dim}-dimensional states, got {Z.shape[1]}")
    Z = grid.bound(Z)
    h = grid.spacing
    base = np.empty(Z.shape, dtype=np.int64)
    frac = np.empty(Z.shape)
    for i in range(grid.dim):
        n = grid.nodes_per_dim[i]
        u = (Z[:, i] - grid.lower[i]) / h[i]
        # states sitting on a node up to round-off get a single unit weight
        r = np.rint(u)
        u = np.where(np.abs(u - r) <= _SNAP * (1.0 + np.abs(u)), r, u)
        if grid.periodic[i]:
            f = np.floor(u)
            lam = u - f
            b = f.astype(np.int64) % n
        else:
            u = np.clip(u, 0.0, n - 1)
            b = np.minimum(np.floor(u).astype(np.int64), n - 2)
            lam = u - b
        base[:, i] = b
        frac[:, i] = lam
    M, d = Z.shape
    idx = np.empty((M, 2**d), dtype=np.int64)
    w = np.empty((M, 2**d))
    strides = np.array([int(np.prod(grid.shape[i + 1:])) for i in range(d)], dtype=np.int64)
    for c, bits in enumerate(itertools.product((0, 1), repeat=d)):
        flat = np.zeros(M, dtype=np.int64)
        wc = np.ones(M)
        for i, bit in enumerate(bits):
            k = base[:, i] + bit
            if grid.periodic[i]:
                k %= grid.nodes_per_dim[i]
            flat += k * strides[i]
            wc *= frac[:, i] if bit else 1.0 - frac[:, i]
        idx[:, c] = flat
        w[:, c] = wc
    return idx, w


def interpolation_weights(grid: Grid, z) -> list[tuple[int, float]]:
    """(node index, coefficient) pairs interpolating at state ``z``.

    Coefficients of repeated vertices are summed and zero coefficients
    dropped, so a state on a node yields ``[(i, 1.0)]``.
    """
    idx, w = _corner_weights(grid, np.asarray(z, dtype=float)[None, :])
    acc: dict[int, float] = {}
    for j, c in zip(idx[0], w[0]):
        if c != 0.0:
            acc[int(j)] = acc.get(int(j), 0.0) + float(c)
    return sorted(acc.items())


def weight_matrix(grid: Grid, Z: np.ndarray) -> sp.csr_matrix:
    """Sparse ``(M, N)`` matrix whose row m interpolates at ``Z[m]``."""
    idx, w = _corner_weights(grid, Z)
    M, k = idx.shape
    rows = np.repeat(np.arange(M), k)
    # coo -> csr sums duplicate (row, col) entries
    W = sp.coo_matrix((w.ravel(), (rows, idx.ravel())), shape=(M, grid.n_nodes)).tocsr()
    W.eliminate_zeros()
    W.sort_indices()
    return W


@dataclass
class SparseWeights:
    """Per-action interpolation matrices and their diagonals."""

    matrices: list[sp.csr_matrix]

    def __post_init__(self):
        self.diagonals = [np.asarray(W.diagonal()).copy() for W in self.matrices]
        self.off_diagonal = []
        for W, dg in zip(self.matrices, self.diagonals):
            Wo = (W - sp.diags(dg, format="csr")).tocsr()
            Wo.eliminate_zeros()
            self.off_diagonal.append(Wo)

    @property
    def n_actions(self) -> int:
        return len(self.matrices)

    @property
    def n_nodes(self) -> int:
        return self.matrices[0].shape[0]

    def to_dict(self) -> dict:
        return {"n_nodes": self.n_nodes,
                "matrices": [{"indptr": W.indptr.tolist(), "indices": W.indices.tolist(),
                              "data": W.data.tolist()} for W in self.matrices]}

    @classmethod
    def from_dict(cls, d: dict) -> "SparseWeights":
        n = d["n_nodes"]
        mats = [sp.csr_matrix((np.array(m["data"]), np.array(m["indices"]),
                               np.array(m["indptr"])), shape=(n, n)) for m in d["matrices"]]
        return cls(mats)


@dataclass
class PlannerInputs:
    """Everything value iteration needs besides the weights.

    ``rewards`` and ``uncertainty`` are ``(N, |A|)``; ``terminal`` is an
    ``(N,)`` boolean mask of absorbing nodes whose value is pinned to
    ``terminal_value`` (0 for goal states).
    """

    rewards: np.ndarray
    gamma: float
    v_max: float
    uncertainty: np.ndarray | None = None
    terminal: np.ndarray | None = None
    terminal_value: float = 0.0

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.terminal is None:
            self.terminal = np.zeros(len(self.rewards), dtype=bool)
        if self.uncertainty is not None:
            self.uncertainty = np.asarray(self.uncertainty, dtype=float)
            if self.uncertainty.shape != self.rewards.shape:
                raise ValueError("uncertainty must have the same shape as rewards")
            if np.any(self.uncertainty < 0) or np.any(self.uncertainty > 1):
                raise ValueError("uncertainty entries must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")


class Mode(enum.Enum):
    PLAIN = "plain"
    INCREASING_COORDINATE = "increasing_coordinate"
    UNCERTAINTY_AUGMENTED = "uncertainty_augmented"


class PlanResult(NamedTuple):
    q: np.ndarray
    iterations: int
    converged: bool
    delta: float


def build_weights(grid: Grid, oracle: Callable, n_actions: int,
                  nodes: np.ndarray | None = None):
    """Interpolation weights of predicted successors of every node.

    ``oracle(X, a)`` returns ``(Z, C)``: successor states ``(N, d)`` and
    uncertainties ``(N,)``. Returns ``(SparseWeights, Z, C)`` with ``Z`` of
    shape ``(|A|, N, d)`` and ``C`` of shape ``(N, |A|)``.
    """
    if nodes is None:
        nodes = grid.nodes()
    mats, succ, unc = [], [], []
    for a in range(n_actions):
        Z, C = oracle(nodes, a)
        Z = np.asarray(Z, dtype=float)
        bad = ~np.isfinite(Z).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"successor oracle failed at node {i} (x={nodes[i]}), action {a}")
        Z = grid.bound(Z)
        mats.append(weight_matrix(grid, Z))
        succ.append(Z)
        unc.append(np.broadcast_to(np.asarray(C, dtype=float), (len(nodes),)))
    return SparseWeights(mats), np.stack(succ), np.stack(unc, axis=1)


def bellman_plain(q: np.ndarray, inputs: PlannerInputs, weights: SparseWeights) -> np.ndarray:
    """One sweep of basic Jacobi iteration."""
    out = np.empty_like(q)
    for a, W in enumerate(weights.matrices):
        out[:, a] = inputs.rewards[:, a] + inputs.gamma * (W @ q).max(axis=1)
    out[inputs.terminal] = inputs.terminal_value
    return out


def _sweep_increasing(q: np.ndarray, inputs: PlannerInputs, weights: SparseWeights,
                      blend: bool) -> np.ndarray:
    g = inputs.gamma
    n_act = q.shape[1]
    out = np.empty_like(q)
    for a in range(n_act):
        diag = weights.diagonals[a]
        off = weights.off_diagonal[a] @ q
        r = inputs.rewards[:, a]
        denom = 1.0 - g * diag
        solvable = denom > 1e-12
        # own action: self-transition weight solved in closed form
        own = np.where(solvable, (r + g * off[:, a]) / np.where(solvable, denom, 1.0), -np.inf)
        if n_act > 1:
            others = np.delete(diag[:, None] * q + off, a, axis=1).max(axis=1)
            new = np.maximum(own, r + g * others)
        else:
            new = own
        if not solvable.all():
            full = (diag[:, None] * q + off).max(axis=1)
            new = np.where(solvable, new, r + g * full)
        if blend:
            c = inputs.uncertainty[:, a]
            new = (1.0 - c) * new + c * inputs.v_max
        out[:, a] = new
    out[inputs.terminal] = inputs.terminal_value
    return out


def value_iteration(inputs: PlannerInputs, weights: SparseWeights, q0: np.ndarray | None = None,
                    mode: Mode | str = Mode.INCREASING_COORDINATE, tol: float = 1e-2,
                    max_iters: int = 500) -> PlanResult:
    """Iterate the chosen Bellman update until the sup-norm change drops below ``tol``.

    ``PLAIN`` is basic Jacobi iteration. ``INCREASING_COORDINATE`` divides
    the own-action update by ``1 - gamma * w_ii`` with the diagonal term
    removed from the sum; the other actions' self-transition terms are kept
    explicitly, so the fixed point is the same as for ``PLAIN``.
    ``UNCERTAINTY_AUGMENTED`` blends each increasing-coordinate update with
    ``v_max`` in proportion to the node's uncertainty.
    """
    mode = Mode(mode)
    if tol <= 0:
        raise ValueError("tol must be positive")
    N, n_act = inputs.rewards.shape
    if weights.n_nodes != N or weights.n_actions != n_act:
        raise ValueError("weights do not match planner inputs")
    if mode is Mode.UNCERTAINTY_AUGMENTED and inputs.uncertainty is None:
        raise ValueError("uncertainty-augmented updates need an uncertainty array")
    q = np.zeros((N, n_act)) if q0 is None else np.array(q0, dtype=float, copy=True)
    if q.shape != (N, n_act):
        raise ValueError(f"q0 has shape {q.shape}, expected {(N, n_act)}")
    q[inputs.terminal] = inputs.terminal_value

    first_delta = None
    growing = 0
    delta = np.inf
    for it in range(1, max_iters + 1):
        if mode is Mode.PLAIN:
            q_new = bellman_plain(q, inputs, weights)
        else:
            q_new = _sweep_increasing(q, inputs, weights, mode is Mode.UNCERTAINTY_AUGMENTED)
        delta = float(np.max(np.abs(q_new - q)))
        q = q_new
        if not np.isfinite(delta):
            raise PlannerDivergence(f"non-finite Q values after {it} sweeps")
        if delta < tol:
            return PlanResult(q, it, True, delta)
        if first_delta is None:
            first_delta = delta
        elif inputs.gamma >= 1.0 and delta > 10.0 * first_delta:
            growing += 1
            if growing >= 10:
                raise PlannerDivergence(
                    f"sup-norm change grew from {first_delta:.3g} to {delta:.3g} "
                    f"over {it} sweeps")
        else:
            growing = 0
    return PlanResult(q, max_iters, False, delta)


def interpolate_q(q: np.ndarray, grid: Grid, x, a: int | None = None):
    """Interpolated Q-value at state ``x``; all actions if ``a`` is None."""
    idx, w = _corner_weights(grid, np.asarray(x, dtype=float)[None, :])
    vals = (w[0][:, None] * q[idx[0]]).sum(axis=0)
    return vals if a is None else float(vals[a])


def greedy_action(q: np.ndarray, grid: Grid, x) -> int:
    """argmax_a of the interpolated Q; ties go to the lowest index."""
    return int(np.argmax(interpolate_q(q, grid, x)))


def value_grid(q: np.ndarray, grid: Grid) -> np.ndarray:
    """Rows of (node coordinates..., max_a Q) for plotting."""
    return np.column_stack([grid.nodes(), q.max(axis=1)])
