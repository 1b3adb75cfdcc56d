"""Kinematic model of a rear-driven car-like vehicle.

State ``q = [x, y, theta, phi]`` (rear-axle midpoint, heading, steering angle),
input ``u = [v, omega]`` (longitudinal speed, steering rate). The discrete
model is the forward-Euler map of the continuous kinematics.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import SteeringSingularityError

# Rows of the input box  T u <= g  (order: -v, -omega, +v, +omega).
BOX_T = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class CarParams:
    """Physical parameters and sampling time.

    Parameters
    ----------
    l : float
        Wheelbase [m].
    delta : float
        Offset of the linearizing point ahead of the front axle [m].
    v_max, omega_max : float
        Symmetric bounds on speed [m/s] and steering rate [rad/s].
    phi_max : float
        Steering-angle bound [rad], ``0 < phi_max < pi/2``.
    ts : float
        Sampling time [s].
    """

    l: float = 0.256
    delta: float = 0.35
    v_max: float = 1.0
    omega_max: float = 10.0
    phi_max: float = 0.6
    ts: float = 0.01

    def __post_init__(self):
        for name in ("l", "delta", "v_max", "omega_max", "ts"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 < self.phi_max < np.pi / 2:
            raise ValueError(f"phi_max must lie in (0, pi/2), got {self.phi_max!r}")

    @classmethod
    def paper_qcar(cls) -> "CarParams":
        """Parameters of the 1/10-scale test vehicle (the defaults)."""
        return cls()

    @property
    def g(self) -> np.ndarray:
        """Right-hand side of the input box ``T u <= g``."""
        return np.array([self.v_max, self.omega_max, self.v_max, self.omega_max])

    def to_dict(self) -> dict:
        return asdict(self)


class CarState(NamedTuple):
    x: float
    y: float
    theta: float
    phi: float

    def front_axle(self, params: CarParams) -> tuple[float, float]:
        """Midpoint of the front axle."""
        return (self.x + params.l * np.cos(self.theta),
                self.y + params.l * np.sin(self.theta))


class CarInput(NamedTuple):
    v: float
    omega: float


def _check_steering(phi, limit=np.pi / 2):
    if np.any(np.abs(phi) >= limit):
        raise SteeringSingularityError(
            f"steering angle {phi!r} reaches the singularity |phi| >= {limit:.6g}")


def continuous_derivative(q, u, params: CarParams) -> np.ndarray:
    """Right-hand side of the continuous kinematics, ``q_dot = f(q, u)``."""
    x, y, theta, phi = np.asarray(q, dtype=float)
    v, omega = np.asarray(u, dtype=float)
    _check_steering(phi)
    return np.array([v * np.cos(theta),
                     v * np.sin(theta),
                     v / params.l * np.tan(phi),
                     omega])


def step_discrete(q, u, params: CarParams) -> CarState:
    """One forward-Euler step of length ``params.ts``."""
    q = np.asarray(q, dtype=float)
    return CarState(*(q + params.ts * continuous_derivative(q, u, params)))


def step_rk4(q, u, params: CarParams, substeps: int = 10) -> CarState:
    """Integrate the continuous model over one sample with classical RK4.

    Used as a plant-mismatch mode in simulation; the controller's guarantees
    are stated for :func:`step_discrete`.
    """
    q = np.asarray(q, dtype=float)
    h = params.ts / substeps
    for _ in range(substeps):
        k1 = continuous_derivative(q, u, params)
        k2 = continuous_derivative(q + 0.5 * h * k1, u, params)
        k3 = continuous_derivative(q + 0.5 * h * k2, u, params)
        k4 = continuous_derivative(q + h * k3, u, params)
        q = q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return CarState(*q)


def step_batch(Q, U, params: CarParams) -> np.ndarray:
    """Vectorized Euler step for arrays of shape (..., 4) and (..., 2)."""
    Q = np.asarray(Q, dtype=float)
    U = np.asarray(U, dtype=float)
    _check_steering(Q[..., 3])
    v = U[..., 0]
    out = Q.copy()
    out[..., 0] += params.ts * v * np.cos(Q[..., 2])
    out[..., 1] += params.ts * v * np.sin(Q[..., 2])
    out[..., 2] += params.ts * v / params.l * np.tan(Q[..., 3])
    out[..., 3] += params.ts * U[..., 1]
    return out


def is_admissible(u, params: CarParams, tol: float = 0.0) -> bool:
    """Membership of ``u`` in the closed input box (optionally inflated by ``tol``)."""
    v, omega = np.asarray(u, dtype=float)
    return bool(abs(v) <= params.v_max + tol and abs(omega) <= params.omega_max + tol)
