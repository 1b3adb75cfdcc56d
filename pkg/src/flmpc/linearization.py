"""Input-output feedback linearization of the car and the geometry of its
state-dependent input set.

The linearizing output is the point ``P`` located ``delta`` ahead of the
front axle. With ``w = M(eta) u`` the output obeys ``z_dot = w`` while the
internal state ``eta = (theta, phi)`` follows ``eta_dot = O(eta) w``.
Box constraints on ``u`` become the parallelogram ``L(eta) w <= g``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SteeringSingularityError
from .vehicle import BOX_T, CarParams


def _steer_guard(eta2):
    if np.any(np.abs(eta2) >= np.pi / 2):
        raise SteeringSingularityError(f"eta2={eta2!r} reaches the singularity |eta2| >= pi/2")


def _steer_bound_guard(eta2, params: CarParams, tol=1e-12):
    # U(eta) is only characterized for |eta2| <= phi_max.
    _steer_guard(eta2)
    if np.any(np.abs(eta2) > params.phi_max + tol):
        raise SteeringSingularityError(
            f"eta2={eta2!r} exceeds the steering bound phi_max={params.phi_max}")


def output_transform(q, params: CarParams) -> np.ndarray:
    """Position ``z`` of the linearizing point for state(s) ``q`` of shape (..., 4)."""
    q = np.asarray(q, dtype=float)
    x, y, theta, phi = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    l, d = params.l, params.delta
    return np.stack([x + l * np.cos(theta) + d * np.cos(theta + phi),
                     y + l * np.sin(theta) + d * np.sin(theta + phi)], axis=-1)


def input_matrix(eta, params: CarParams) -> np.ndarray:
    """Decoupling matrix ``M(eta)`` with ``w = M(eta) u``."""
    eta1, eta2 = np.asarray(eta, dtype=float)
    _steer_guard(eta2)
    l, d = params.l, params.delta
    s1, c1 = np.sin(eta1 + eta2), np.cos(eta1 + eta2)
    t2 = np.tan(eta2)
    return np.array([
        [np.cos(eta1) - t2 * (np.sin(eta1) + d / l * s1), -d * s1],
        [np.sin(eta1) + t2 * (np.cos(eta1) + d / l * c1), d * c1],
    ])


def apply_input_matrix(eta, u, params: CarParams) -> np.ndarray:
    """``M(eta) u`` for stacked arguments of shape (..., 2)."""
    eta = np.asarray(eta, dtype=float)
    u = np.asarray(u, dtype=float)
    eta1, eta2 = eta[..., 0], eta[..., 1]
    _steer_guard(eta2)
    l, d = params.l, params.delta
    s1, c1 = np.sin(eta1 + eta2), np.cos(eta1 + eta2)
    t2 = np.tan(eta2)
    v, omega = u[..., 0], u[..., 1]
    return np.stack([(np.cos(eta1) - t2 * (np.sin(eta1) + d / l * s1)) * v - d * s1 * omega,
                     (np.sin(eta1) + t2 * (np.cos(eta1) + d / l * c1)) * v + d * c1 * omega],
                    axis=-1)


def input_matrix_det(eta2, params: CarParams) -> float:
    return params.delta / np.cos(eta2)


def input_matrix_inv(eta, params: CarParams) -> np.ndarray:
    """Closed-form inverse via the adjugate and ``det M = delta / cos(eta2)``."""
    m = input_matrix(eta, params)
    det = input_matrix_det(eta[1], params)
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


def internal_matrix(eta, params: CarParams) -> np.ndarray:
    """Matrix ``O(eta)`` of the internal dynamics ``eta_dot = O(eta) w``."""
    eta1, eta2 = np.asarray(eta, dtype=float)
    _steer_guard(eta2)
    l, d = params.l, params.delta
    s1, c1 = np.sin(eta1 + eta2), np.cos(eta1 + eta2)
    se = np.sin(eta2)
    return np.array([
        [se * c1 / l, se * s1 / l],
        [-se * c1 / l - s1 / d, -se * s1 / l + c1 / d],
    ])


def fl_discrete_step(z, eta, w, params: CarParams):
    """Euler step of the linearized model: returns ``(z_next, eta_next)``."""
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    w = np.asarray(w, dtype=float)
    return z + params.ts * w, eta + params.ts * internal_matrix(eta, params) @ w


def error_step(z_err, w, w_r, params: CarParams) -> np.ndarray:
    """Tracking-error update ``z~+ = z~ + Ts (w - w_r)``."""
    return (np.asarray(z_err, dtype=float)
            + params.ts * (np.asarray(w, dtype=float) - np.asarray(w_r, dtype=float)))


@dataclass(frozen=True)
class InputPolytope:
    """The parallelogram ``{w : L w <= g}`` and its vertices.

    Vertices are ordered so that ``V1 = M(-v, -omega)``, ``V2 = M(-v, +omega)``,
    ``V3 = -V1`` and ``V4 = -V2`` (images of the box corners).
    """

    L: np.ndarray
    g: np.ndarray
    vertices: np.ndarray  # shape (4, 2)

    def contains(self, w, tol: float = 1e-9) -> bool:
        return bool(np.all(self.L @ np.asarray(w, dtype=float) <= self.g + tol))

    def side_lengths(self) -> np.ndarray:
        v = self.vertices
        return np.linalg.norm(v - np.roll(v, -1, axis=0), axis=1)


def polytope_rows(eta, params: CarParams) -> np.ndarray:
    """``L(eta) = T M(eta)^-1``."""
    return BOX_T @ input_matrix_inv(eta, params)


def polytope_vertices(eta, params: CarParams) -> np.ndarray:
    """Closed-form vertices of ``U(eta)``, shape (4, 2)."""
    eta1, eta2 = np.asarray(eta, dtype=float)
    l, d = params.l, params.delta
    vb, wb = params.v_max, params.omega_max
    s1, c1 = np.sin(eta1 + eta2), np.cos(eta1 + eta2)
    s2, c2 = np.sin(eta1 + 2 * eta2), np.cos(eta1 + 2 * eta2)
    den = 2 * l * np.cos(eta2)
    # Split into steering-rate and speed contributions of each coordinate.
    wx = d * l * wb * (s2 + np.sin(eta1))
    vx = d * vb * (np.cos(eta1) - c2) - 2 * l * vb * c1
    wy = d * l * wb * (np.cos(eta1) + c2)
    vy = d * vb * (np.sin(eta1) - s2) - 2 * l * vb * s1
    v1 = np.array([wx + vx, -wy + vy]) / den
    v2 = np.array([-wx + vx, wy + vy]) / den
    return np.array([v1, v2, -v1, -v2])


def constraint_polytope(eta, params: CarParams) -> InputPolytope:
    """State-dependent input set ``U(eta)`` of the linearized model."""
    _steer_bound_guard(eta[1], params)
    return InputPolytope(L=polytope_rows(eta, params), g=params.g,
                         vertices=polytope_vertices(eta, params))


def inscribed_radii(eta2, params: CarParams) -> tuple[float, float]:
    """Half-widths of ``U(eta)`` across its steering-rate and speed sides.

    ``r1`` is the half distance between the two edges produced by the
    steering-rate bound, ``r2`` the one produced by the speed bound; the
    largest disc centred at the origin inside ``U(eta)`` has radius
    ``min(r1, r2)``.
    """
    _steer_bound_guard(eta2, params)
    d, l = params.delta, params.l
    r1 = d * l * params.omega_max / np.sqrt(d ** 2 - d ** 2 * np.cos(eta2) ** 2 + l ** 2)
    r2 = np.sqrt(params.v_max ** 2 / np.cos(eta2) ** 2)
    return float(r1), float(r2)


@dataclass(frozen=True)
class WorstCaseDisc:
    r_hat: float

    def contains(self, w, tol: float = 0.0) -> bool:
        return bool(np.dot(w, w) <= (self.r_hat + tol) ** 2)


def worst_case_disc(params: CarParams) -> WorstCaseDisc:
    """Disc contained in ``U(eta)`` for every steering angle."""
    d, l = params.delta, params.l
    steer_term = d * l * params.omega_max / np.sqrt(d ** 2 + l ** 2)
    return WorstCaseDisc(r_hat=float(min(steer_term, params.v_max)))
