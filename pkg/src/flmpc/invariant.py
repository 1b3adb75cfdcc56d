"""Terminal ellipsoid, its invariance certificate and the terminal feedback law."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import InfeasibleQPError, InvariantViolationError, NotCertifiedError
from .linearization import constraint_polytope, worst_case_disc
from .qp import ActiveSetSolver
from .vehicle import CarParams

log = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-9
_TERMINAL_SOLVER = ActiveSetSolver(2.0 * np.eye(2))


def _sym_power(S, power):
    vals, vecs = np.linalg.eigh(S)
    return (vecs * vals ** power) @ vecs.T


@dataclass(frozen=True)
class TerminalSet:
    """Ellipsoid ``{z : z' S z <= 1}`` with gain ``K`` and certificate scalars.

    ``G`` satisfies ``G' S G = I`` so that the set equals ``{G y : |y| <= 1}``;
    ``xi`` is the repeated eigenvalue of ``G' B' W^-1 B G`` and
    ``lam = 1 - sqrt(xi)``. ``xi_alt`` is the same quantity computed with the
    other factor convention (``G' S^-1 G = I``), kept for reference.
    """

    S: np.ndarray
    K: np.ndarray
    r_d: float
    lam: float
    xi: float
    G: np.ndarray
    r_hat: float
    A_cl: np.ndarray
    B: np.ndarray
    xi_alt: float = field(default=float("nan"))

    @property
    def W_r(self) -> np.ndarray:
        return self.r_d ** 2 * np.eye(2)

    def contains(self, z_err, tol: float = MEMBERSHIP_TOL) -> bool:
        z = np.asarray(z_err, dtype=float)
        return bool(z @ self.S @ z <= 1.0 + tol)

    def level(self, z_err) -> float:
        z = np.asarray(z_err, dtype=float)
        return float(z @ self.S @ z)


def build_terminal_set(K, params: CarParams, r_d: float) -> TerminalSet:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (2, 2):
        raise ValueError(f"K must be 2x2, got shape {K.shape}")
    if abs(np.linalg.det(K)) < 1e-12 or np.linalg.cond(K) > 1e12:
        raise ValueError("K must be invertible")
    if not r_d > 0:
        raise ValueError("r_d must be positive")
    r_hat = worst_case_disc(params).r_hat
    S = K.T @ K / r_hat ** 2
    B = params.ts * np.eye(2)
    A_cl = np.eye(2) - B @ K
    W_inv = np.eye(2) / r_d ** 2

    G = _sym_power(S, -0.5)
    xi = _repeated_eigenvalue(G.T @ B.T @ W_inv @ B @ G)
    G_alt = _sym_power(S, 0.5)
    xi_alt = float(np.max(np.linalg.eigvalsh(G_alt.T @ B.T @ W_inv @ B @ G_alt)))
    log.debug("terminal set: xi=%.6g (G'SG=I), xi=%.6g (G'S^-1G=I)", xi, xi_alt)
    return TerminalSet(S=S, K=K, r_d=float(r_d), lam=1.0 - np.sqrt(xi), xi=xi, G=G,
                       r_hat=r_hat, A_cl=A_cl, B=B, xi_alt=xi_alt)


def _repeated_eigenvalue(X):
    vals = np.linalg.eigvalsh(X)
    if abs(vals[1] - vals[0]) > 1e-9 * max(abs(vals[1]), 1e-300):
        raise ValueError(f"eigenvalues {vals} are not repeated; "
                         "the certificate is only defined for a repeated eigenvalue")
    return float(vals.mean())


def rpi_matrix(ts: TerminalSet, lam=None, form: str = "paper") -> np.ndarray:
    """``S^-1 - lam^-1 A_cl' S^-1 A_cl - (1-lam)^-1 D``, PSD iff certified.

    ``form="paper"`` uses ``D = B' W^-1 B``; ``form="exact"`` uses the
    disturbance shape ``D = B W B'`` of the ellipsoidal invariance condition.
    """
    lam = ts.lam if lam is None else lam
    S_inv = np.linalg.inv(ts.S)
    if form == "paper":
        D = ts.B.T @ (np.eye(2) / ts.r_d ** 2) @ ts.B
    elif form == "exact":
        D = ts.B @ ts.W_r @ ts.B.T
    else:
        raise ValueError(f"unknown form {form!r}")
    return S_inv - ts.A_cl.T @ S_inv @ ts.A_cl / lam - D / (1.0 - lam)


def check_rpi(ts: TerminalSet, params: CarParams = None, form: str = "paper"):
    """Return ``(holds, margin)``; ``margin`` is the smallest eigenvalue of :func:`rpi_matrix`.

    With ``form="exact"`` the multiplier ``lam`` is optimized over ``(0, 1)``
    instead of taken from ``ts.lam``. A ``ts.lam`` outside ``(0, 1)`` makes the
    paper form fail with margin ``-inf``.
    """
    if form == "paper" and not 0.0 < ts.lam < 1.0:
        return False, -np.inf
    if form == "exact":
        margin, _ = exact_rpi_margin(ts)
    else:
        margin = float(np.min(np.linalg.eigvalsh(rpi_matrix(ts, form=form))))
    return margin >= 0.0, margin


def exact_rpi_margin(ts: TerminalSet):
    """Best margin of the exact condition over ``lam`` in ``(0, 1)``; returns ``(margin, lam)``."""
    def neg_margin(lam):
        return -float(np.min(np.linalg.eigvalsh(rpi_matrix(ts, lam, form="exact"))))
    res = minimize_scalar(neg_margin, bounds=(1e-9, 1 - 1e-9), method="bounded",
                          options={"xatol": 1e-12})
    return -float(res.fun), float(res.x)


def search_gain(params: CarParams, r_d: float, form: str = "paper",
                k_grid=None) -> float:
    """Scalar gain ``k`` (for ``K = k I``) certified by :func:`check_rpi`.

    The certified gain with the largest normalized margin is located on a log
    grid, then the smallest certified gain below it is found by bisection.
    """
    if k_grid is None:
        k_grid = np.geomspace(1e-3, 1.0 / params.ts, 400)

    def margin(k):
        try:
            ts = build_terminal_set(k * np.eye(2), params, r_d)
        except ValueError:
            return -np.inf
        m = check_rpi(ts, params, form=form)[1]
        return m / np.min(np.linalg.eigvalsh(np.linalg.inv(ts.S)))

    scores = np.array([margin(k) for k in k_grid])
    if not np.any(scores >= 0):
        raise NotCertifiedError(f"no scalar gain certifies r_d={r_d} ({form} form)")
    best = int(np.argmax(scores))
    hi = k_grid[best]
    below = np.flatnonzero(scores[:best] < 0)
    if below.size == 0:
        return float(hi)
    lo = k_grid[below[-1]]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return float(hi)


def terminal_qp(z_err, eta, w_r, ts: TerminalSet, params: CarParams):
    """Solve the projection QP of the terminal law; returns ``(w, w_hat, QpSolution)``."""
    z = np.asarray(z_err, dtype=float)
    w_r = np.asarray(w_r, dtype=float)
    if not ts.contains(z):
        raise ValueError(f"z_err is outside the terminal set (level {ts.level(z):.6g})")
    poly = constraint_polytope(eta, params)
    feedback = -ts.K @ z
    try:
        sol = _TERMINAL_SOLVER.solve(-2.0 * w_r, poly.L, poly.g - poly.L @ feedback,
                                     x0=np.zeros(2))
    except InfeasibleQPError as exc:
        raise InvariantViolationError("terminal QP infeasible inside the terminal set") from exc
    return feedback + sol.x, sol.x, sol


def terminal_control(z_err, eta, w_r, ts: TerminalSet, params: CarParams) -> np.ndarray:
    """Terminal law ``w = -K z~ + w_hat`` with ``w_hat`` the admissible input closest to ``w_r``.

    The feedback enters with a minus sign so that the closed loop matrix is
    ``A - B K``.
    """
    return terminal_qp(z_err, eta, w_r, ts, params)[0]
