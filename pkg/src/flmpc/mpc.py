"""Condensed MPC on the linearized error model and the dual-mode controller.

Decision variables are the ``N`` linearized inputs ``w`` stacked in one
vector. The first input is constrained by the exact polytope ``U(eta(k))``,
later inputs by a regular polygon inscribed in the worst-case disc, and the
predicted terminal error by a polygon inscribed in the terminal ellipsoid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InfeasibleQPError, NotCertifiedError
from .invariant import (_TERMINAL_SOLVER, TerminalSet, build_terminal_set, check_rpi,
                        terminal_qp)
from .linearization import constraint_polytope, input_matrix_inv, output_transform
from .qp import ActiveSetSolver, QpProblem
from .trajectory import ReferenceTrajectory
from .vehicle import CarInput, CarParams

log = logging.getLogger(__name__)

MODES = ("dual_mode", "always_qp")


@dataclass
class MpcConfig:
    N: int = 10
    Q: np.ndarray = field(default_factory=lambda: np.eye(2))
    R: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))
    n_w: int = 10
    n_N: int = 10
    mode: str = "dual_mode"

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("horizon N must be a positive integer")
        self.N = int(self.N)
        if self.Q.shape != (2, 2) or self.R.shape != (2, 2):
            raise ValueError("Q and R must be 2x2")
        if not np.allclose(self.Q, self.Q.T) or np.min(np.linalg.eigvalsh(self.Q)) < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(self.R, self.R.T) or np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ValueError("R must be symmetric positive definite")
        if self.n_w < 3 or self.n_N < 3:
            raise ValueError("polygon side counts must be at least 3")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class CondensedQp:
    Psi: np.ndarray
    Theta: np.ndarray
    Psi_N: np.ndarray
    Theta_N: np.ndarray
    Q_hat: np.ndarray
    R_hat: np.ndarray
    H: np.ndarray
    N: int
    solver: ActiveSetSolver = field(repr=False)

    def predict(self, z_err, w, w_r) -> np.ndarray:
        """Stacked predicted errors ``z~(k+1..k+N)``."""
        return self.Psi @ np.asarray(z_err, float) + self.Theta @ (np.ravel(w) - np.ravel(w_r))

    def linear_term(self, z_err, w_r) -> np.ndarray:
        w_r = np.ravel(w_r)
        return self.Theta.T @ self.Q_hat @ (self.Psi @ z_err - self.Theta @ w_r) - self.R_hat @ w_r

    def cost_constant(self, z_err, w_r) -> float:
        """The term dropped from the condensed objective."""
        w_r = np.ravel(w_r)
        e = self.Psi @ z_err - self.Theta @ w_r
        return float(0.5 * e @ self.Q_hat @ e + 0.5 * w_r @ self.R_hat @ w_r)


@dataclass
class PolygonApprox:
    P_w: np.ndarray
    p_w: np.ndarray
    P_zN: np.ndarray
    p_zN: np.ndarray
    vertices_w: np.ndarray
    vertices_zN: np.ndarray


def _matrix_power_blocks(A, N):
    powers = [np.eye(A.shape[0])]
    for _ in range(N):
        powers.append(powers[-1] @ A)
    return powers


def build_condensed(cfg: MpcConfig, params: CarParams) -> CondensedQp:
    N = cfg.N
    A = np.eye(2)
    B = params.ts * np.eye(2)
    Ap = _matrix_power_blocks(A, N)
    Psi = np.vstack(Ap[1:])
    Theta = np.zeros((2 * N, 2 * N))
    for i in range(N):
        for j in range(i + 1):
            Theta[2 * i:2 * i + 2, 2 * j:2 * j + 2] = Ap[i - j] @ B
    Q_hat = np.kron(np.eye(N), cfg.Q)
    R_hat = np.kron(np.eye(N), cfg.R)
    H = Theta.T @ Q_hat @ Theta + R_hat
    H = 0.5 * (H + H.T)
    return CondensedQp(Psi=Psi, Theta=Theta, Psi_N=Ap[N], Theta_N=Theta[-2:].copy(),
                       Q_hat=Q_hat, R_hat=R_hat, H=H, N=N, solver=ActiveSetSolver(H))


def regular_polygon(n: int, radius: float = 1.0):
    """Half-plane rows and vertices of the regular ``n``-gon inscribed in a circle.

    The first vertex sits at angle 0; edge ``j`` joins vertices ``j`` and ``j+1``.
    """
    ang = 2 * np.pi * np.arange(n) / n
    vertices = radius * np.column_stack([np.cos(ang), np.sin(ang)])
    normal_ang = ang + np.pi / n
    P = np.column_stack([np.cos(normal_ang), np.sin(normal_ang)])
    p = np.full(n, radius * np.cos(np.pi / n))
    return P, p, vertices


def build_polygons(cfg: MpcConfig, terminal: TerminalSet, r_hat: float) -> PolygonApprox:
    P_w, p_w, v_w = regular_polygon(cfg.n_w, r_hat)
    P_u, p_u, v_u = regular_polygon(cfg.n_N, 1.0)
    # z = G y maps the unit polygon onto one inscribed in the terminal ellipsoid
    P_zN = P_u @ np.linalg.inv(terminal.G)
    return PolygonApprox(P_w=P_w, p_w=p_w, P_zN=P_zN, p_zN=p_u,
                         vertices_w=v_w, vertices_zN=v_u @ terminal.G.T)


@dataclass
class _StaticRows:
    A: np.ndarray   # rows for steps 1..N-1 followed by the terminal rows
    b: np.ndarray   # matching right-hand side (terminal part without the z~ term)
    term_rows: np.ndarray


def _static_rows(cond: CondensedQp, poly: PolygonApprox) -> _StaticRows:
    N = cond.N
    n_w = poly.P_w.shape[0]
    A_disc = np.zeros(((N - 1) * n_w, 2 * N))
    for i in range(1, N):
        A_disc[(i - 1) * n_w:i * n_w, 2 * i:2 * i + 2] = poly.P_w
    b_disc = np.tile(poly.p_w, N - 1)
    A_term = poly.P_zN @ cond.Theta_N
    return _StaticRows(A=np.vstack([A_disc, A_term]),
                       b=np.concatenate([b_disc, poly.p_zN]), term_rows=A_term)


def assemble_step_qp(cond: CondensedQp, poly: PolygonApprox, z_err, eta, w_r_horizon,
                     params: CarParams, static: Optional[_StaticRows] = None) -> QpProblem:
    """QP for one sampling instant.

    Rows are ordered: exact polytope on the first input (4), disc polygon on
    inputs 1..N-1, terminal polygon on the predicted final error.
    """
    z_err = np.asarray(z_err, dtype=float)
    w_r = np.asarray(w_r_horizon, dtype=float).reshape(cond.N, 2).ravel()
    static = static or _static_rows(cond, poly)
    poly0 = constraint_polytope(eta, params)
    A_first = np.zeros((4, 2 * cond.N))
    A_first[:, :2] = poly0.L
    n_term = poly.P_zN.shape[0]
    b = np.concatenate([poly0.g, static.b])
    # terminal rows: P (Psi_N z + Theta_N (w - w_r)) <= p
    b[-n_term:] -= poly.P_zN @ (cond.Psi_N @ z_err - cond.Theta_N @ w_r)
    return QpProblem(H=cond.H, p=cond.linear_term(z_err, w_r),
                     A_ineq=np.vstack([A_first, static.A]), b_ineq=b)


def rollout_cost(cond: CondensedQp, cfg: MpcConfig, z_err, w, w_r) -> float:
    """Horizon cost ``1/2 sum z~'Q z~ + w~'R w~`` by explicit recursion."""
    z = np.asarray(z_err, dtype=float)
    w = np.asarray(w, dtype=float).reshape(cond.N, 2)
    w_r = np.asarray(w_r, dtype=float).reshape(cond.N, 2)
    ts = cond.Theta[0, 0]
    total = 0.0
    for wi, wri in zip(w, w_r):
        z = z + ts * (wi - wri)
        dw = wi - wri
        total += 0.5 * (z @ cfg.Q @ z + dw @ cfg.R @ dw)
    return float(total)


def _project_onto_polytope(w, eta, params):
    """Closest point of ``U(eta)`` to ``w``."""
    poly = constraint_polytope(eta, params)
    return _TERMINAL_SOLVER.solve(-2.0 * np.asarray(w, float), poly.L, poly.g, x0=np.zeros(2)).x


class FLMPCController(BaseEstimator):
    """Dual-mode feedback-linearized tracking MPC.

    ``fit`` performs the offline part (terminal set, certificate, condensed
    matrices and Hessian factorization) for a given reference trajectory;
    :meth:`control_step` is the online loop and keeps a warm start between
    calls. :meth:`predict` evaluates the control law statelessly for a batch of
    states.

    Parameters
    ----------
    params : CarParams, optional
        Vehicle parameters; defaults to :meth:`CarParams.paper_qcar`.
    horizon : int
        Prediction horizon ``N``.
    Q, R : array-like, optional
        Error and input weights (default ``I`` and ``0.01 I``).
    n_w, n_N : int
        Side counts of the disc and terminal polygons.
    K : array-like, optional
        Terminal gain (default ``4 I``).
    mode : {"dual_mode", "always_qp"}
        ``always_qp`` never switches to the terminal law.
    r_d : float, optional
        Radius of the reference-input ball used by the certificate; defaults
        to the trajectory's own ``r_d``.
    rpi_form : {"exact", "paper"}
        Which invariance certificate is evaluated in ``fit``.
    strict : bool
        Raise :class:`NotCertifiedError` instead of logging a warning when
        the certificate fails.
    """

    def __init__(self, params=None, horizon=10, Q=None, R=None, n_w=10, n_N=10, K=None,
                 mode="dual_mode", r_d=None, rpi_form="exact", strict=False):
        self.params = params
        self.horizon = horizon
        self.Q = Q
        self.R = R
        self.n_w = n_w
        self.n_N = n_N
        self.K = K
        self.mode = mode
        self.r_d = r_d
        self.rpi_form = rpi_form
        self.strict = strict

    # --- offline -----------------------------------------------------------
    def fit(self, trajectory: ReferenceTrajectory, y=None):
        params = self.params if self.params is not None else CarParams.paper_qcar()
        if abs(trajectory.ts - params.ts) > 1e-12:
            raise ValueError(f"trajectory sampled at {trajectory.ts}, controller expects {params.ts}")
        self.params_ = params
        self.config_ = MpcConfig(
            N=self.horizon,
            Q=np.eye(2) if self.Q is None else self.Q,
            R=0.01 * np.eye(2) if self.R is None else self.R,
            n_w=self.n_w, n_N=self.n_N, mode=self.mode)
        K = 4.0 * np.eye(2) if self.K is None else np.asarray(self.K, dtype=float)
        r_d = trajectory.r_d if self.r_d is None else float(self.r_d)
        self.terminal_set_ = build_terminal_set(K, params, r_d)
        self.certified_, self.rpi_margin_ = check_rpi(self.terminal_set_, params, form=self.rpi_form)
        if not self.certified_:
            msg = (f"terminal set not certified ({self.rpi_form} form, margin "
                   f"{self.rpi_margin_:.3g}, r_d={r_d:.4g})")
            if self.strict:
                raise NotCertifiedError(msg)
            log.warning(msg)
        self.condensed_ = build_condensed(self.config_, params)
        self.polygons_ = build_polygons(self.config_, self.terminal_set_, self.terminal_set_.r_hat)
        self.static_rows_ = _static_rows(self.condensed_, self.polygons_)
        self.trajectory_ = trajectory
        self.reset()
        return self

    def reset(self):
        """Clear the warm start and rewind the internal step counter."""
        self.step_ = 0
        self.w_prev_ = None

    # --- online --------------------------------------------------------------
    def tracking_error(self, state, k) -> np.ndarray:
        return output_transform(state, self.params_) - self.trajectory_.z_r[min(k, len(self.trajectory_) - 1)]

    def _warm_start(self, z_err, w_r):
        """Shifted previous plan with the terminal move appended."""
        if self.w_prev_ is None:
            return None
        ts = self.terminal_set_
        shifted = np.vstack([self.w_prev_[1:], np.zeros((1, 2))])
        # error after the first N-1 shifted moves, then the terminal law
        z_end = z_err + self.params_.ts * np.sum(shifted[:-1] - w_r[:-1], axis=0)
        w_last = -ts.K @ z_end + w_r[-1]
        radius = ts.r_hat * np.cos(np.pi / self.config_.n_w)
        norm = np.linalg.norm(w_last)
        if norm > radius:
            w_last *= radius / norm
        shifted[-1] = w_last
        return shifted.ravel()

    def _solve_horizon(self, z_err, eta, w_r, warm=None):
        qp = assemble_step_qp(self.condensed_, self.polygons_, z_err, eta, w_r,
                              self.params_, static=self.static_rows_)
        sol = self.condensed_.solver.solve(qp.p, qp.A_ineq, qp.b_ineq, x0=warm)
        cost = sol.objective + self.condensed_.cost_constant(z_err, w_r)
        return sol, cost

    def control_step(self, state, k: Optional[int] = None):
        """Compute the input for ``state`` at sample ``k`` (defaults to the internal counter).

        Returns ``(CarInput, diagnostics)``.
        """
        check_is_fitted(self, "condensed_")
        k = self.step_ if k is None else int(k)
        q = np.asarray(state, dtype=float)
        eta = q[2:4]
        z_err = self.tracking_error(q, k)
        w_r = self.trajectory_.window(k, self.config_.N)
        ts = self.terminal_set_
        diag = {"k": k, "z_err": z_err, "level": ts.level(z_err), "qp_iterations": 0,
                "infeasible": False, "phase1": False, "cost": float("nan")}

        if self.config_.mode == "dual_mode" and ts.contains(z_err):
            w, _, sol = terminal_qp(z_err, eta, w_r[0], ts, self.params_)
            diag.update(mode="terminal", qp_iterations=sol.iterations)
            self.w_prev_ = None
        else:
            warm = self._warm_start(z_err, w_r)
            try:
                sol, cost = self._solve_horizon(z_err, eta, w_r, warm)
                plan = sol.x.reshape(-1, 2)
                diag.update(mode="mpc", qp_iterations=sol.iterations, cost=cost,
                            phase1=sol.phase1)
            except InfeasibleQPError:
                if warm is None:
                    raise
                plan = warm.reshape(-1, 2).copy()
                plan[0] = _project_onto_polytope(plan[0], eta, self.params_)
                diag.update(mode="fallback", infeasible=True)
                log.warning("MPC problem infeasible at k=%d; applying shifted plan", k)
            w = plan[0]
            self.w_prev_ = plan

        u = input_matrix_inv(eta, self.params_) @ w
        p = self.params_
        u_clipped = np.clip(u, [-p.v_max, -p.omega_max], [p.v_max, p.omega_max])
        diag["w"] = w
        diag["clip"] = float(np.max(np.abs(u_clipped - u)))
        self.step_ = k + 1
        return CarInput(*u_clipped), diag

    def predict(self, X, steps=None):
        """Inputs for a batch of states, each solved from scratch.

        ``X`` has shape (n_samples, 4); ``steps`` gives the reference index of
        each row (default ``0 .. n_samples-1``).
        """
        check_is_fitted(self, "condensed_")
        X = check_array(X, ensure_min_features=4)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 state columns, got {X.shape[1]}")
        steps = np.arange(X.shape[0]) if steps is None else np.asarray(steps, dtype=int)
        saved = (self.step_, self.w_prev_)
        out = np.empty((X.shape[0], 2))
        try:
            for i, (q, k) in enumerate(zip(X, steps)):
                self.w_prev_ = None
                out[i] = self.control_step(q, k)[0]
        finally:
            self.step_, self.w_prev_ = saved
        return out
