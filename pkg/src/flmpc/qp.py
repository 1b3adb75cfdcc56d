"""Dense primal active-set solver for strictly convex QPs.

    minimize    1/2 x' H x + p' x
    subject to  A x <= b

The Hessian is factorized once (``H = L L'``) and every equality-constrained
subproblem is solved in the range space of that factor, so a solver built for
a constant ``H`` can be reused across many right-hand sides. A phase-1 linear
program supplies a feasible starting point, or a certificate of infeasibility,
when no feasible warm start is given.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import linprog

from .exceptions import InfeasibleQPError, MaxIterationsError

FEAS_TOL = 1e-9
KKT_TOL = 1e-8
MAX_ITER = 200


@dataclass
class QpProblem:
    H: np.ndarray
    p: np.ndarray
    A_ineq: Optional[np.ndarray] = None
    b_ineq: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    active_set: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.p = np.asarray(self.p, dtype=float).ravel()
        n = self.p.size
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if self.A_ineq is None:
            self.A_ineq = np.zeros((0, n))
            self.b_ineq = np.zeros(0)
        self.A_ineq = np.asarray(self.A_ineq, dtype=float).reshape(-1, n)
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()
        if self.b_ineq.size != self.A_ineq.shape[0]:
            raise ValueError("A_ineq and b_ineq disagree on the number of rows")

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def m(self) -> int:
        return self.b_ineq.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.p @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    active_set: list
    multipliers: np.ndarray
    kkt_residual: float
    complementarity: float
    iterations: int
    objective: float
    objective_trace: list = field(default_factory=list, repr=False)
    phase1: bool = False


def _check_hessian(H):
    if not np.allclose(H, H.T, atol=1e-10, rtol=0.0):
        raise ValueError("H must be symmetric (within 1e-10)")
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise ValueError("H must be positive definite") from exc


def phase1(A, b, feas_tol=FEAS_TOL):
    """Find ``x`` with ``A x <= b`` by maximizing the worst normalized slack.

    Returns ``(x, margin)`` where ``margin <= 0`` means feasible. Raises
    :class:`InfeasibleQPError` when the best achievable violation exceeds
    ``feas_tol``.
    """
    m, n = A.shape
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    An, bn = A / norms[:, None], b / norms
    # variables (x, t): minimize t  s.t.  An x - t <= bn,  t >= -1
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([An, -np.ones((m, 1))])
    bounds = [(None, None)] * n + [(-1.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=bn, bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleQPError(f"phase-1 LP failed: {res.message}")
    x = res.x[:n]
    violation = float(np.max(A @ x - b, initial=-np.inf))
    if violation > feas_tol:
        raise InfeasibleQPError(
            f"constraints are infeasible: smallest achievable violation {violation:.3e}",
            violation=violation)
    return x, float(res.x[-1])


class ActiveSetSolver:
    """Primal active-set method with a cached Cholesky factor of ``H``.

    Ties in the ratio test and in the choice of the constraint to drop are
    broken by the smallest constraint index, so replays are deterministic.
    """

    def __init__(self, H, feas_tol: float = FEAS_TOL, kkt_tol: float = KKT_TOL,
                 max_iter: int = MAX_ITER):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.feas_tol = feas_tol
        self.kkt_tol = kkt_tol
        self.max_iter = max_iter
        self.chol = _check_hessian(self.H)
        self._linv = solve_triangular(self.chol, np.eye(self.H.shape[0]), lower=True)

    # --- building blocks -------------------------------------------------
    def _eqp(self, g, A_w):
        """Step and multipliers of the equality-constrained subproblem."""
        h = self._linv @ g
        if A_w.shape[0] == 0:
            return -self._linv.T @ h, np.zeros(0)
        Y = self._linv @ A_w.T
        Qy, Ry = np.linalg.qr(Y)
        qh = Qy.T @ h
        lam = solve_triangular(Ry, -qh)
        d = -self._linv.T @ (h - Qy @ qh)
        return d, lam

    def _independent_subset(self, A, rows):
        kept = []
        for i in rows:
            trial = A[kept + [i]]
            if np.linalg.matrix_rank(trial, tol=1e-10) == len(kept) + 1:
                kept.append(i)
        return kept

    def _multipliers(self, g, A_w):
        if A_w.shape[0] == 0:
            return np.zeros(0)
        lam, *_ = np.linalg.lstsq(A_w.T, -g, rcond=None)
        return lam

    # --- main entry --------------------------------------------------------
    def solve(self, p, A=None, b=None, x0=None, active_set=None) -> QpSolution:
        H = self.H
        n = H.shape[0]
        p = np.asarray(p, dtype=float).ravel()
        A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
        b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
        m = b.size

        x, W, used_phase1 = self._starting_point(p, A, b, x0, active_set)
        trace = [0.5 * x @ H @ x + p @ x]
        it = 0
        while True:
            if it >= self.max_iter:
                raise MaxIterationsError(f"active-set loop exceeded {self.max_iter} iterations")
            it += 1
            g = H @ x + p
            A_w = A[W]
            d, lam = self._eqp(g, A_w)
            if np.linalg.norm(d, np.inf) <= 1e-12 * (1.0 + np.linalg.norm(x, np.inf)):
                if len(W) == 0 or lam.min() >= -self.kkt_tol:
                    break
                neg = np.flatnonzero(lam <= lam.min() + 1e-14)
                drop = min((W[j] for j in neg))
                W.remove(drop)
                continue
            Ad = A @ d
            ratio = np.full(m, np.inf)
            inactive = np.ones(m, dtype=bool)
            inactive[W] = False
            cand = inactive & (Ad > 1e-14)
            slack = np.maximum(b[cand] - A[cand] @ x, 0.0)
            ratio[cand] = slack / Ad[cand]
            alpha = 1.0
            blocking = None
            if cand.any():
                rmin = ratio.min()
                if rmin < 1.0:
                    alpha = rmin
                    blocking = int(np.flatnonzero(ratio <= rmin * (1 + 1e-12) + 1e-16)[0])
            x = x + alpha * d
            if blocking is not None:
                W.append(blocking)
                W.sort()
            trace.append(0.5 * x @ H @ x + p @ x)

        g = H @ x + p
        lam_w = self._multipliers(g, A[W])
        multipliers = np.zeros(m)
        multipliers[W] = lam_w
        resid = g + A[W].T @ lam_w if W else g
        slack = A @ x - b if m else np.zeros(0)
        return QpSolution(
            x=x,
            active_set=list(W),
            multipliers=multipliers,
            kkt_residual=float(np.linalg.norm(resid, np.inf)),
            complementarity=float(np.max(np.abs(multipliers * slack), initial=0.0)),
            iterations=it,
            objective=float(0.5 * x @ H @ x + p @ x),
            objective_trace=trace,
            phase1=used_phase1,
        )

    def _starting_point(self, p, A, b, x0, active_set):
        tol = self.feas_tol
        if x0 is not None:
            x0 = np.asarray(x0, dtype=float).ravel()
            if A.shape[0] == 0 or np.all(A @ x0 <= b + tol):
                W = []
                if active_set:
                    near = [i for i in sorted(set(int(i) for i in active_set))
                            if abs(A[i] @ x0 - b[i]) <= 10 * tol * (1 + abs(b[i]))]
                    W = self._independent_subset(A, near)
                return x0, W, False
        x_u = -(self._linv.T @ (self._linv @ p))
        if A.shape[0] == 0 or np.all(A @ x_u <= b + tol):
            return x_u, [], False
        x_f, _ = phase1(A, b, tol)
        return x_f, [], True


def solve(qp: QpProblem, **solver_options) -> QpSolution:
    """Solve a single :class:`QpProblem` (factorizes ``H`` on every call)."""
    solver = ActiveSetSolver(qp.H, **solver_options)
    return solver.solve(qp.p, qp.A_ineq, qp.b_ineq, x0=qp.x0, active_set=qp.active_set)
