"""Deterministic benchmark domains: mountain car, pendulum swing-up, bicycle
balancing and acrobot swing-up.

All dynamics are vectorized: ``transition`` takes an ``(M, d)`` batch of
states and a single action index and returns the ``(M, d)`` batch of
successors, already clamped (bounded dimensions) or wrapped (angular
dimensions) into the state box. ``step`` is the single-state convenience
wrapper used by the online agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "Environment",
    "StepResult",
    "MountainCar",
    "Pendulum",
    "Bicycle",
    "Acrobot",
    "MountainCarConstants",
    "PendulumConstants",
    "BicycleConstants",
    "AcrobotConstants",
    "DOMAINS",
    "make_env",
    "rk4",
    "wrap_angle",
]


def wrap_angle(theta):
    """Map angles into ``[-pi, pi)``."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


def rk4(deriv: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float,
        substeps: int) -> np.ndarray:
    """Fixed-step fourth-order Runge-Kutta for an autonomous ODE.

    ``deriv`` maps a ``(M, d)`` batch of states to time derivatives; the
    control input is assumed held constant over the whole interval.
    """
    h = dt / substeps
    for _ in range(substeps):
        k1 = deriv(x)
        k2 = deriv(x + 0.5 * h * k1)
        k3 = deriv(x + 0.5 * h * k2)
        k4 = deriv(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: float
    terminal: bool


class Environment:
    """Base class for a deterministic domain on a hyperrectangle.

    Subclasses set the class attributes below and implement
    ``_raw_transition`` (unbounded successor), ``reward`` and
    ``is_terminal``.
    """

    name: str = ""
    lower: np.ndarray
    upper: np.ndarray
    periodic: tuple[bool, ...]
    actions: np.ndarray
    gamma: float
    max_steps: int = 500
    r_max: float
    default_grid: tuple[int, ...]
    # only used when gamma == 1
    v_max_cap: float = 0.0
    # value pinned at absorbing states by the planner
    terminal_value: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def v_max(self) -> float:
        if self.gamma < 1.0:
            return self.r_max / (1.0 - self.gamma)
        return self.v_max_cap

    def bound(self, X: np.ndarray) -> np.ndarray:
        """Clamp bounded dimensions and wrap periodic ones into the box."""
        X = np.array(X, dtype=float, copy=True)
        for k in range(self.dim):
            if self.periodic[k]:
                width = self.upper[k] - self.lower[k]
                X[..., k] = (X[..., k] - self.lower[k]) % width + self.lower[k]
            else:
                X[..., k] = np.clip(X[..., k], self.lower[k], self.upper[k])
        return X

    def transition(self, X: np.ndarray, a: int) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.bound(self._raw_transition(X, a))

    def _raw_transition(self, X: np.ndarray, a: int) -> np.ndarray:
        raise NotImplementedError

    def reward(self, X: np.ndarray, a: int, X_next: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def is_terminal(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.zeros(len(X), dtype=bool)

    def start_state(self, episode: int = 0) -> np.ndarray:
        raise NotImplementedError

    def step(self, x, a: int) -> StepResult:
        x = np.asarray(x, dtype=float)
        xn = self.transition(x[None, :], a)
        r = self.reward(x[None, :], a, xn)[0]
        return StepResult(xn[0], float(r), bool(self.is_terminal(xn)[0]))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "periodic": list(self.periodic),
            "actions": np.asarray(self.actions).tolist(),
            "gamma": self.gamma,
            "max_steps": self.max_steps,
            "r_max": self.r_max,
            "v_max": self.v_max,
        }


# ---------------------------------------------------------------------------
# Mountain car


@dataclass(frozen=True)
class MountainCarConstants:
    # Sutton & Barto (1998), section 8.4
    thrust: float = 0.001
    hill: float = 0.0025
    frequency: float = 3.0
    goal_position: float = 0.5
    # reward received on the step that reaches the goal
    terminal_reward: float = -1.0


class MountainCar(Environment):
    name = "mountain_car"
    periodic = (False, False)
    max_steps = 500
    r_max = 1.0
    default_grid = (100, 100)

    def __init__(self, constants: MountainCarConstants | None = None,
                 gamma: float = 0.99):
        self.c = constants or MountainCarConstants()
        self.lower = np.array([-1.2, -0.07])
        self.upper = np.array([self.c.goal_position, 0.07])
        self.actions = np.array([-1.0, 0.0, 1.0])
        self.gamma = gamma

    def _raw_transition(self, X, a):
        c = self.c
        p, v = X[:, 0], X[:, 1]
        v = v + c.thrust * self.actions[a] - c.hill * np.cos(c.frequency * p)
        v = np.clip(v, self.lower[1], self.upper[1])
        p = np.clip(p + v, self.lower[0], self.upper[0])
        v = np.where((p <= self.lower[0]) & (v < 0.0), 0.0, v)
        return np.stack([p, v], axis=1)

    def reward(self, X, a, X_next):
        X_next = np.atleast_2d(X_next)
        done = self.is_terminal(X_next)
        return np.where(done, self.c.terminal_reward, -1.0)

    def is_terminal(self, X):
        X = np.atleast_2d(X)
        return X[:, 0] >= self.c.goal_position

    def start_state(self, episode=0):
        return np.array([-math.pi / 6.0, 0.0])


# ---------------------------------------------------------------------------
# Inverted pendulum swing-up


@dataclass(frozen=True)
class PendulumConstants:
    # Deisenroth, Rasmussen & Peters (2009), GPDP pendulum; angle 0 is upright
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    friction: float = 0.05
    dt: float = 0.2
    substeps: int = 10
    max_speed: float = 10.0


class Pendulum(Environment):
    name = "pendulum"
    periodic = (True, False)
    max_steps = 500
    default_grid = (100, 100)

    def __init__(self, constants: PendulumConstants | None = None,
                 gamma: float = 0.99):
        self.c = constants or PendulumConstants()
        self.lower = np.array([-math.pi, -self.c.max_speed])
        self.upper = np.array([math.pi, self.c.max_speed])
        self.actions = np.array([-5.0, -2.5, 0.0, 2.5, 5.0])
        self.gamma = gamma
        amax = np.max(np.abs(self.actions))
        self.r_max = 0.1 * math.pi**2 + 0.01 * self.c.max_speed**2 + 0.01 * amax**2

    def derivative(self, X, u):
        c = self.c
        theta, omega = X[:, 0], X[:, 1]
        acc = (-c.friction * omega + c.mass * c.gravity * c.length * np.sin(theta)
               + u) / (c.mass * c.length**2)
        return np.stack([omega, acc], axis=1)

    def energy(self, X):
        c = self.c
        X = np.atleast_2d(X)
        return (0.5 * c.mass * c.length**2 * X[:, 1] ** 2
                + c.mass * c.gravity * c.length * np.cos(X[:, 0]))

    def _raw_transition(self, X, a):
        u = self.actions[a]
        Xn = rk4(lambda s: self.derivative(s, u), X, self.c.dt, self.c.substeps)
        Xn[:, 1] = np.clip(Xn[:, 1], -self.c.max_speed, self.c.max_speed)
        return Xn

    def reward(self, X, a, X_next):
        X = np.atleast_2d(X)
        theta = wrap_angle(X[:, 0])
        u = self.actions[a]
        return -0.1 * theta**2 - 0.01 * X[:, 1] ** 2 - 0.01 * u**2

    def start_state(self, episode=0):
        # hanging down
        return np.array([-math.pi, 0.0])


# ---------------------------------------------------------------------------
# Bicycle balancing


@dataclass(frozen=True)
class BicycleConstants:
    # Randlov & Alstrom (1998) as used by Ernst et al. (2005)
    dt: float = 0.01
    substeps: int = 1
    speed: float = 10.0 / 3.6
    gravity: float = 9.82
    d_cm: float = 0.30
    c: float = 0.66
    h: float = 0.94
    mass_cycle: float = 15.0
    mass_tyre: float = 1.7
    mass_person: float = 60.0
    radius: float = 0.34
    wheelbase: float = 1.11
    fallen_angle: float = 12.0 * math.pi / 180.0
    max_handlebar: float = 80.0 * math.pi / 180.0
    fall_reward: float = -10.0
    start_angle: float = 10.0 * math.pi / 180.0


class Bicycle(Environment):
    name = "bicycle"
    periodic = (False, False, False, False)
    max_steps = 500
    default_grid = (20, 20, 20, 20)

    def __init__(self, constants: BicycleConstants | None = None,
                 gamma: float = 0.98):
        self.c = c = constants or BicycleConstants()
        self.lower = np.array([-c.fallen_angle, -2 * math.pi, -c.max_handlebar, -2 * math.pi])
        self.upper = -self.lower
        # (rider displacement [m], handlebar torque [N m])
        self.actions = np.array([[0.0, 0.0], [-0.02, 0.0], [0.02, 0.0],
                                 [0.0, -2.0], [0.0, 2.0]])
        self.gamma = gamma
        self.r_max = abs(c.fall_reward)

    def derivative(self, X, action):
        c = self.c
        disp, torque = action
        omega, domega, alpha, dalpha = X.T
        M = c.mass_cycle + c.mass_person
        sigma_dot = c.speed / c.radius
        I_bc = 13.0 / 3.0 * c.mass_cycle * c.h**2 + c.mass_person * (c.h + c.d_cm) ** 2
        I_dc = c.mass_tyre * c.radius**2
        I_dv = 1.5 * c.mass_tyre * c.radius**2
        I_dl = 0.5 * c.mass_tyre * c.radius**2
        phi = omega + np.arctan(disp / c.h)
        tan_a = np.tan(alpha)
        # sign(alpha) * (1/r_f, 1/r_b, 1/r_cm) written without the alpha=0 branch
        inv_rf = np.sin(alpha) / c.wheelbase
        inv_rb = tan_a / c.wheelbase
        inv_rcm = tan_a / np.sqrt((c.wheelbase - c.c) ** 2 * tan_a**2 + c.wheelbase**2)
        ddomega = (c.h * M * c.gravity * np.sin(phi)
                   - np.cos(phi) * (I_dc * sigma_dot * dalpha
                                    + c.speed**2 * (c.mass_tyre * c.radius * (inv_rf + inv_rb)
                                                    + M * c.h * inv_rcm))) / I_bc
        ddalpha = (torque - I_dv * sigma_dot * domega) / I_dl
        return np.stack([domega, ddomega, dalpha, ddalpha], axis=1)

    def _raw_transition(self, X, a):
        act = self.actions[a]
        Xn = rk4(lambda s: self.derivative(s, act), X, self.c.dt, self.c.substeps)
        Xn[:, 2] = np.clip(Xn[:, 2], -self.c.max_handlebar, self.c.max_handlebar)
        return Xn

    def reward(self, X, a, X_next):
        X = np.atleast_2d(X)
        fallen = self.is_terminal(X_next)
        return np.where(fallen, self.c.fall_reward, -X[:, 0] ** 2)

    def is_terminal(self, X):
        X = np.atleast_2d(X)
        # states are clamped to the box, so reaching the boundary means fallen
        return np.abs(X[:, 0]) >= self.c.fallen_angle

    def start_state(self, episode=0):
        sign = 1.0 if episode % 2 == 0 else -1.0
        return np.array([sign * self.c.start_angle, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Acrobot


@dataclass(frozen=True)
class AcrobotConstants:
    # Sutton & Barto (1998), section 11.3; full equations incl. the
    # m2*l1*lc2*dtheta1^2*sin(theta2) term so that energy is conserved
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5
    i1: float = 1.0
    i2: float = 1.0
    gravity: float = 9.8
    dt: float = 0.2
    substeps: int = 4
    max_vel1: float = 4 * math.pi
    max_vel2: float = 9 * math.pi


class Acrobot(Environment):
    name = "acrobot"
    periodic = (True, False, True, False)
    max_steps = 500
    r_max = 1.0
    default_grid = (25, 25, 25, 25)
    # rewards are -1 per step, so no episode can do better than 0
    v_max_cap = 0.0

    def __init__(self, constants: AcrobotConstants | None = None,
                 gamma: float = 1.0):
        self.c = c = constants or AcrobotConstants()
        self.lower = np.array([-math.pi, -c.max_vel1, -math.pi, -c.max_vel2])
        self.upper = -self.lower
        self.actions = np.array([-1.0, 1.0])
        self.gamma = gamma

    def mass_matrix(self, X):
        c = self.c
        cos2 = np.cos(X[:, 2])
        d1 = (c.m1 * c.lc1**2 + c.m2 * (c.l1**2 + c.lc2**2 + 2 * c.l1 * c.lc2 * cos2)
              + c.i1 + c.i2)
        d2 = c.m2 * (c.lc2**2 + c.l1 * c.lc2 * cos2) + c.i2
        d3 = c.m2 * c.lc2**2 + c.i2
        return d1, d2, d3

    def derivative(self, X, tau):
        c = self.c
        th1, dth1, th2, dth2 = X.T
        d1, d2, d3 = self.mass_matrix(X)
        phi2 = c.m2 * c.lc2 * c.gravity * np.cos(th1 + th2 - math.pi / 2)
        phi1 = (-c.m2 * c.l1 * c.lc2 * dth2**2 * np.sin(th2)
                - 2 * c.m2 * c.l1 * c.lc2 * dth2 * dth1 * np.sin(th2)
                + (c.m1 * c.lc1 + c.m2 * c.l1) * c.gravity * np.cos(th1 - math.pi / 2)
                + phi2)
        ddth2 = ((tau + d2 / d1 * phi1 - c.m2 * c.l1 * c.lc2 * dth1**2 * np.sin(th2) - phi2)
                 / (d3 - d2**2 / d1))
        ddth1 = -(d2 * ddth2 + phi1) / d1
        return np.stack([dth1, ddth1, dth2, ddth2], axis=1)

    def energy(self, X):
        c = self.c
        X = np.atleast_2d(X)
        d1, d2, d3 = self.mass_matrix(X)
        q1, q2 = X[:, 1], X[:, 3]
        kinetic = 0.5 * (d1 * q1**2 + 2 * d2 * q1 * q2 + d3 * q2**2)
        potential = -c.gravity * (c.m1 * c.lc1 * np.cos(X[:, 0])
                                  + c.m2 * (c.l1 * np.cos(X[:, 0])
                                            + c.lc2 * np.cos(X[:, 0] + X[:, 2])))
        return kinetic + potential

    def _raw_transition(self, X, a):
        tau = self.actions[a]
        Xn = rk4(lambda s: self.derivative(s, tau), X, self.c.dt, self.c.substeps)
        Xn[:, 1] = np.clip(Xn[:, 1], -self.c.max_vel1, self.c.max_vel1)
        Xn[:, 3] = np.clip(Xn[:, 3], -self.c.max_vel2, self.c.max_vel2)
        return Xn

    def tip_height(self, X):
        X = np.atleast_2d(X)
        return -self.c.l1 * np.cos(X[:, 0]) - self.c.l2 * np.cos(X[:, 0] + X[:, 2])

    def reward(self, X, a, X_next):
        return -np.ones(len(np.atleast_2d(X)))

    def is_terminal(self, X):
        return self.tip_height(X) > self.c.l1

    def start_state(self, episode=0):
        return np.zeros(4)


DOMAINS: dict[str, tuple[type[Environment], type]] = {
    "mountain_car": (MountainCar, MountainCarConstants),
    "pendulum": (Pendulum, PendulumConstants),
    "bicycle": (Bicycle, BicycleConstants),
    "acrobot": (Acrobot, AcrobotConstants),
}


def make_env(name: str, gamma: float | None = None,
             constants: dict | None = None) -> Environment:
    """Build a registered domain, optionally overriding constants and gamma."""
    try:
        cls, const_cls = DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; choose from {sorted(DOMAINS)}") from None
    consts = const_cls(**(constants or {}))
    if gamma is None:
        return cls(consts)
    return cls(consts, gamma=gamma)
