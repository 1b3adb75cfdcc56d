"""Closed-loop simulation, tracking metrics, timing and a brute-force NMPC oracle."""
from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib.resources import files
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from sklearn.utils.validation import check_is_fitted
from sklearn.exceptions import NotFittedError

from .exceptions import InfeasibleQPError
from .linearization import apply_input_matrix, output_transform
from .trajectory import ReferenceTrajectory, interpolate_max_speed, read_waypoints
from .vehicle import CarParams, is_admissible, step_batch, step_discrete, step_rk4

TRACE_COLUMNS = ("t", "x", "y", "theta", "phi", "v", "omega", "z_err1", "z_err2", "level",
                 "mode", "qp_iterations", "solve_time", "infeasible")
METRIC_NAMES = ("ISE_xy", "ITSE_xy", "ISE_theta", "ITSE_theta", "ISE_phi", "ITSE_phi")
SCENARIOS = {"oval": "oval.csv", "figure-eight": "figure_eight.csv"}
SPEEDS = (0.6, 0.75)
CAPTURE_TOL = 1e-9


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    return a - 2 * np.pi * np.ceil((a - np.pi) / (2 * np.pi))


def tracking_errors(q, q_r):
    """Position, heading and steering errors; angles wrapped."""
    q = np.asarray(q, dtype=float).reshape(-1, 4)
    q_r = np.asarray(q_r, dtype=float).reshape(-1, 4)
    e_xy = np.linalg.norm(q[:, :2] - q_r[:, :2], axis=1)
    return e_xy, wrap_angle(q[:, 2] - q_r[:, 2]), wrap_angle(q[:, 3] - q_r[:, 3])


def metrics(t, q, q_r) -> dict:
    """ISE and ITSE of each error signal by the trapezoid rule."""
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        return {name: 0.0 for name in METRIC_NAMES}
    out = {}
    for label, e in zip(("xy", "theta", "phi"), tracking_errors(q, q_r)):
        out[f"ISE_{label}"] = float(trapezoid(e ** 2, t))
        out[f"ITSE_{label}"] = float(trapezoid(t * e ** 2, t))
    return out


@dataclass
class SimResult:
    t: np.ndarray
    q: np.ndarray
    u: np.ndarray
    q_r: np.ndarray
    z_err: np.ndarray
    level: np.ndarray
    mode: list
    qp_iterations: np.ndarray
    solve_time: np.ndarray
    infeasible: np.ndarray
    metrics: dict
    input_violations: int = 0
    phi_violations: int = 0
    final_state: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    @property
    def infeasible_events(self) -> int:
        return int(np.sum(self.infeasible))

    @property
    def capture_step(self) -> Optional[int]:
        """First step with the error inside the terminal ellipsoid."""
        hit = np.flatnonzero(self.level <= 1.0 + CAPTURE_TOL)
        return int(hit[0]) if hit.size else None

    @property
    def stays_captured(self) -> bool:
        k = self.capture_step
        return k is not None and bool(np.all(self.level[k:] <= 1.0 + CAPTURE_TOL))

    @property
    def final_position_error(self) -> float:
        if not len(self):
            return 0.0
        return float(np.linalg.norm(self.q[-1, :2] - self.q_r[-1, :2]))

    def mode_counts(self) -> dict:
        return {m: self.mode.count(m) for m in sorted(set(self.mode))}


def lateral_offset(q, offset: float) -> np.ndarray:
    """Shift a state sideways (to the left of its heading) by ``offset`` metres."""
    q = np.array(q, dtype=float)
    q[:2] += offset * np.array([-np.sin(q[2]), np.cos(q[2])])
    return q


_PLANTS = {"euler": step_discrete, "rk4": step_rk4}


def run_closed_loop(traj: ReferenceTrajectory, controller, q0=None, plant: str = "euler",
                    seed: Optional[int] = None, noise_std: float = 0.0) -> SimResult:
    """Simulate ``controller`` along ``traj``, one control step per sample.

    ``q0`` defaults to the first reference state. Process noise, if any, is
    added to the plant state after each step from a generator seeded by
    ``seed``. A plant step that pushes the steering angle past ``phi_max`` is
    clamped and counted in ``phi_violations``.
    """
    if plant not in _PLANTS:
        raise ValueError(f"plant must be one of {sorted(_PLANTS)}")
    n = len(traj)
    empty = SimResult(t=np.zeros(0), q=np.zeros((0, 4)), u=np.zeros((0, 2)),
                      q_r=np.zeros((0, 4)), z_err=np.zeros((0, 2)), level=np.zeros(0),
                      mode=[], qp_iterations=np.zeros(0, int), solve_time=np.zeros(0),
                      infeasible=np.zeros(0, bool), metrics=metrics([], [], []))
    if n == 0:
        return empty
    try:
        check_is_fitted(controller, "condensed_")
        if controller.trajectory_ is not traj:
            controller.fit(traj)
    except NotFittedError:
        controller.fit(traj)
    controller.reset()
    params = controller.params_
    step = _PLANTS[plant]
    rng = np.random.default_rng(seed)

    q = np.array(traj.q_r[0] if q0 is None else q0, dtype=float)
    Q, U = np.zeros((n, 4)), np.zeros((n, 2))
    Z, lv = np.zeros((n, 2)), np.zeros(n)
    modes, iters = [], np.zeros(n, int)
    times, infeasible = np.zeros(n), np.zeros(n, bool)
    bad_u = bad_phi = 0
    for k in range(n):
        Q[k] = q
        t0 = time.perf_counter()
        try:
            u, diag = controller.control_step(q, k)
        except InfeasibleQPError as exc:
            if k == 0:
                raise InfeasibleQPError(
                    "initial MPC problem is infeasible; the offline feasibility requirement "
                    f"is not met from this initial state ({exc})", violation=exc.violation) from exc
            raise
        times[k] = time.perf_counter() - t0
        U[k], Z[k], lv[k] = u, diag["z_err"], diag["level"]
        modes.append(diag["mode"])
        iters[k], infeasible[k] = diag["qp_iterations"], diag["infeasible"]
        bad_u += not is_admissible(u, params)
        q = np.asarray(step(q, u, params), dtype=float)
        if noise_std:
            q = q + rng.normal(scale=noise_std, size=4)
        if abs(q[3]) > params.phi_max:
            bad_phi += 1
            q[3] = np.clip(q[3], -params.phi_max, params.phi_max)
    return SimResult(t=traj.t.copy(), q=Q, u=U, q_r=traj.q_r.copy(), z_err=Z, level=lv,
                     mode=modes, qp_iterations=iters, solve_time=times, infeasible=infeasible,
                     metrics=metrics(traj.t, Q, traj.q_r), input_violations=bad_u,
                     phi_violations=bad_phi, final_state=q,
                     meta={"plant": plant, "seed": seed, "noise_std": noise_std})


# --- timing -------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingStats:
    n: int
    avg: float
    max: float


def timing_run(controller, traj: ReferenceTrajectory, repetitions: int = 1, q0=None,
               warmup: int = 1) -> TimingStats:
    """Wall-clock statistics of ``control_step`` over repeated closed-loop runs."""
    if repetitions <= 0:
        return TimingStats(0, float("nan"), float("nan"))
    for _ in range(warmup):
        run_closed_loop(traj.slice(0, min(len(traj), 50)), controller, q0=q0)
    samples = []
    for _ in range(repetitions):
        samples.append(run_closed_loop(traj, controller, q0=q0).solve_time)
    all_t = np.concatenate(samples)
    if not all_t.size:
        return TimingStats(0, float("nan"), float("nan"))
    return TimingStats(int(all_t.size), float(all_t.mean()), float(all_t.max()))


# --- oracle ---------------------------------------------------------------------------

def _input_grid(params: CarParams, resolution: int) -> np.ndarray:
    v = np.linspace(-params.v_max, params.v_max, resolution)
    w = np.linspace(-params.omega_max, params.omega_max, resolution)
    return np.array(list(itertools.product(v, w)))


def nonlinear_rollout_cost(q, U, traj: ReferenceTrajectory, k: int, params: CarParams,
                           Q=None, R=None) -> np.ndarray:
    """Horizon cost of input sequences applied to the car model.

    ``U`` has shape (..., N, 2). The stage cost is written in the linearized
    coordinates, ``1/2 (z~' Q z~ + w~' R w~)`` with ``z~`` the output error
    after each move and ``w~ = M(eta) u - w_r``. The reference output is
    advanced with the same Euler recursion as the error model,
    ``z_r+ = z_r + Ts w_r``, so for a sequence produced by the linearized
    controller the cost coincides with the QP objective.
    """
    Q = np.eye(2) if Q is None else np.asarray(Q, float)
    R = 0.01 * np.eye(2) if R is None else np.asarray(R, float)
    U = np.asarray(U, dtype=float)
    N = U.shape[-2]
    lead = U.shape[:-2]
    states = np.broadcast_to(np.asarray(q, dtype=float), lead + (4,)).reshape(-1, 4)
    U = U.reshape(-1, N, 2)
    w_r = traj.window(k, N, "w_r")
    z_r = traj.z_r[min(k, len(traj) - 1)] + params.ts * np.cumsum(w_r, axis=0)
    total = np.zeros(states.shape[0])
    for i in range(N):
        w_err = apply_input_matrix(states[:, 2:4], U[:, i], params) - w_r[i]
        states = step_batch(states, U[:, i], params)
        z_err = output_transform(states, params) - z_r[i]
        total += 0.5 * (np.einsum("ij,jk,ik->i", z_err, Q, z_err)
                        + np.einsum("ij,jk,ik->i", w_err, R, w_err))
    return total.reshape(lead)


def exhaustive_nmpc_oracle(q, traj: ReferenceTrajectory, k: int, params: CarParams,
                           N: int = 2, resolution: int = 21, Q=None, R=None):
    """Best input sequence on a ``resolution x resolution`` grid of the input box.

    Returns ``(U_best, cost)`` with ``U_best`` of shape (N, 2). Exhaustive, so
    only meant for ``N <= 3``.
    """
    if not 1 <= N <= 3:
        raise ValueError("the exhaustive oracle supports 1 <= N <= 3")
    grid = _input_grid(params, resolution)
    g = grid.shape[0]
    combos = list(itertools.product(range(g), repeat=N - 1))
    tail = np.array(combos, dtype=int).reshape(len(combos), N - 1)
    best_cost, best_seq = np.inf, None
    for first in range(g):
        seqs = np.concatenate([np.full((tail.shape[0], 1), first), tail], axis=1)
        costs = nonlinear_rollout_cost(q, grid[seqs], traj, k, params, Q, R)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_seq = float(costs[i]), grid[seqs[i]]
    return best_seq, best_cost


def snap_to_grid(U, params: CarParams, resolution: int = 21) -> np.ndarray:
    """Nearest grid point of the oracle's input grid, per move."""
    U = np.asarray(U, dtype=float)
    lim = np.array([params.v_max, params.omega_max])
    h = 2 * lim / (resolution - 1)
    return np.clip(np.round((U + lim) / h) * h - lim, -lim, lim)


# --- scenarios and export --------------------------------------------------------------

def scenario_path(name: str) -> Path:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return Path(str(files("flmpc") / "data" / SCENARIOS[name]))


@lru_cache(maxsize=16)
def load_scenario(name: str, max_speed: float, params: CarParams = CarParams()) -> ReferenceTrajectory:
    """Shipped waypoint set interpolated to the given peak speed."""
    return interpolate_max_speed(read_waypoints(scenario_path(name)), max_speed, params)


def write_trace(path, result: SimResult):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for k in range(len(result)):
            writer.writerow([repr(float(result.t[k])), *map(repr, map(float, result.q[k])),
                             *map(repr, map(float, result.u[k])),
                             *map(repr, map(float, result.z_err[k])), repr(float(result.level[k])),
                             result.mode[k], int(result.qp_iterations[k]),
                             repr(float(result.solve_time[k])), int(result.infeasible[k])])


def write_metrics(path, rows):
    """One summary row per run; each row is a dict with a ``run`` label plus metric values."""
    rows = list(rows)
    extra = [c for c in rows[0] if c not in ("run",) + METRIC_NAMES] if rows else []
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run", *METRIC_NAMES, *extra])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
