"""Reference trajectories from waypoints.

Waypoints are interpolated in time with a quintic spline, so position,
velocity, acceleration and jerk are all available analytically. The flat
outputs then give the reference heading, steering angle and inputs of the car
and their images in the linearized coordinates.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.interpolate import make_interp_spline

from .exceptions import DegenerateSegmentError, InfeasibleSpeedError, StallError
from .linearization import apply_input_matrix, output_transform
from .vehicle import CarInput, CarParams, CarState

STALL_TOL = 1e-6
RD_MARGIN = 1.05
FLAT_COLUMNS = ("x_r", "y_r", "xd_r", "yd_r", "xdd_r", "ydd_r", "xddd_r", "yddd_r")
TRAJECTORY_COLUMNS = ("t",) + FLAT_COLUMNS + (
    "theta_r", "phi_r", "v_r", "omega_r", "z1_r", "z2_r", "w1_r", "w2_r")


class Waypoint(NamedTuple):
    x: float
    y: float
    t: Optional[float] = None


@dataclass(frozen=True)
class ReferenceSample:
    t: float
    flat: np.ndarray
    q_r: CarState
    u_r: CarInput
    z_r: np.ndarray
    w_r: np.ndarray


@dataclass
class ReferenceTrajectory:
    """Uniformly sampled reference, stored column-wise.

    ``flat`` holds ``(x, y, x', y', x'', y'', x''', y''')`` per sample. The
    heading column is unwrapped so it is continuous along the path.
    """

    t: np.ndarray
    flat: np.ndarray
    q_r: np.ndarray
    u_r: np.ndarray
    z_r: np.ndarray
    w_r: np.ndarray
    r_d: float
    ts: float

    def __len__(self):
        return self.t.size

    def __getitem__(self, k) -> ReferenceSample:
        return ReferenceSample(t=float(self.t[k]), flat=self.flat[k],
                               q_r=CarState(*self.q_r[k]), u_r=CarInput(*self.u_r[k]),
                               z_r=self.z_r[k], w_r=self.w_r[k])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    @property
    def gamma(self) -> float:
        """``max_k ||q_r(k)||``, the uniform bound on the reference state."""
        return float(np.max(np.linalg.norm(self.q_r, axis=1), initial=0.0))

    @property
    def max_w_r(self) -> float:
        return float(np.max(np.linalg.norm(self.w_r, axis=1), initial=0.0))

    def window(self, k: int, horizon: int, field: str = "w_r") -> np.ndarray:
        """Rows ``k .. k+horizon-1`` of ``field``; the last sample is held past the end."""
        data = getattr(self, field)
        idx = np.minimum(np.arange(k, k + horizon), len(self) - 1)
        return data[idx]

    def slice(self, start: int, stop: int) -> "ReferenceTrajectory":
        return ReferenceTrajectory(t=self.t[start:stop], flat=self.flat[start:stop],
                                   q_r=self.q_r[start:stop], u_r=self.u_r[start:stop],
                                   z_r=self.z_r[start:stop], w_r=self.w_r[start:stop],
                                   r_d=self.r_d, ts=self.ts)


# --- flatness formulas -----------------------------------------------------------

def _speed(flat):
    flat = np.asarray(flat, dtype=float)
    v = np.hypot(flat[..., 2], flat[..., 3])
    if np.any(v <= STALL_TOL):
        raise StallError(f"reference speed {np.min(v):.3g} m/s is below the stall tolerance")
    return v


def reference_state(flat, params: CarParams):
    """Heading and steering angle ``(theta_r, phi_r)`` of the flat outputs."""
    flat = np.asarray(flat, dtype=float)
    v = _speed(flat)
    xd, yd, xdd, ydd = flat[..., 2], flat[..., 3], flat[..., 4], flat[..., 5]
    theta = np.arctan2(yd / v, xd / v)
    phi = np.arctan(params.l * (ydd * xd - xdd * yd) / v ** 3)
    return theta, phi


def reference_input(flat, params: CarParams):
    """Reference speed and steering rate ``(v_r, omega_r)``."""
    flat = np.asarray(flat, dtype=float)
    v = _speed(flat)
    xd, yd, xdd, ydd, xddd, yddd = (flat[..., i] for i in range(2, 8))
    l = params.l
    cross = ydd * xd - xdd * yd
    num = (yddd * xd - xddd * yd) * v ** 2 - 3.0 * cross * (xd * xdd + yd * ydd)
    omega = l * v * num / (v ** 6 + l ** 2 * cross ** 2)
    return v, omega


def linearized_reference(q_r, u_r, params: CarParams):
    """Reference output ``z_r`` and linearized input ``w_r = M(theta_r, phi_r) u_r``."""
    q_r = np.asarray(q_r, dtype=float)
    z_r = output_transform(q_r, params)
    w_r = apply_input_matrix(q_r[..., 2:4], u_r, params)
    return z_r, w_r


def build_reference(t, flat, params: CarParams, r_d: Optional[float] = None,
                    unwrap: bool = True) -> ReferenceTrajectory:
    """Complete a sampled flat-output table into a :class:`ReferenceTrajectory`."""
    t = np.asarray(t, dtype=float)
    flat = np.asarray(flat, dtype=float).reshape(-1, 8)
    theta, phi = reference_state(flat, params)
    if unwrap:
        theta = np.unwrap(theta)
    v, omega = reference_input(flat, params)
    q_r = np.column_stack([flat[:, 0], flat[:, 1], theta, phi])
    u_r = np.column_stack([v, omega])
    z_r, w_r = linearized_reference(q_r, u_r, params)
    if r_d is None:
        r_d = RD_MARGIN * float(np.max(np.linalg.norm(w_r, axis=1), initial=0.0))
    return ReferenceTrajectory(t=t, flat=flat, q_r=q_r, u_r=u_r, z_r=z_r, w_r=w_r,
                               r_d=float(r_d), ts=params.ts)


# --- spline interpolation --------------------------------------------------------

def _as_points(waypoints):
    pts = np.array([[w[0], w[1]] for w in waypoints], dtype=float)
    times = [w[2] if len(w) > 2 else None for w in waypoints]
    return pts, times


def _curvature(spline, s):
    d1, d2 = spline.derivative(1)(s), spline.derivative(2)(s)
    speed = np.linalg.norm(d1, axis=-1)
    return np.abs(d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]) / speed ** 3


def _segment_times(pts, closed, average_speed, params, curvature_gain):
    """Crossing-time increments from arc length and peak curvature."""
    chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s_knots = np.concatenate([[0.0], np.cumsum(chord)])
    geo = _fit_spline(s_knots, pts, closed, start_dir=None, end_dir=None)
    gl_x, gl_w = np.polynomial.legendre.leggauss(16)
    dts = []
    for a, b in zip(s_knots[:-1], s_knots[1:]):
        s = 0.5 * (b - a) * gl_x + 0.5 * (a + b)
        length = 0.5 * (b - a) * np.sum(gl_w * np.linalg.norm(geo.derivative(1)(s), axis=1))
        kappa = np.max(_curvature(geo, np.linspace(a, b, 64)))
        dts.append(length / average_speed * (1.0 + curvature_gain * kappa * params.l))
    return np.array(dts), geo, s_knots


def _fit_spline(t, pts, closed, start_dir, end_dir):
    if closed:
        return make_interp_spline(t, pts, k=5, bc_type="periodic")
    if start_dir is None:
        # geometric pass: unit-speed clamped ends along the first/last chords
        start_dir = (pts[1] - pts[0]) / np.linalg.norm(pts[1] - pts[0])
        end_dir = (pts[-1] - pts[-2]) / np.linalg.norm(pts[-1] - pts[-2])
    zero = np.zeros(2)
    return make_interp_spline(t, pts, k=5,
                              bc_type=([(1, start_dir), (2, zero)], [(1, end_dir), (2, zero)]))


def interpolate(waypoints: Sequence, average_speed: float, params: CarParams,
                closed: Optional[bool] = None, curvature_gain: float = 1.0,
                r_d: Optional[float] = None, check_speed: bool = True) -> ReferenceTrajectory:
    """Time-parameterized quintic spline through ``waypoints`` sampled at ``params.ts``.

    Crossing times, when not supplied with every waypoint, are assigned per
    segment as ``arclength / average_speed * (1 + curvature_gain * kappa_max * l)``.
    A path whose last waypoint repeats the first is treated as closed and
    interpolated periodically; the sampled loop then covers ``[0, T)``.
    """
    pts, times = _as_points(waypoints)
    if len(pts) < 2:
        raise ValueError("at least two waypoints are required")
    if not average_speed > 0:
        raise ValueError("average_speed must be positive")
    if closed is None:
        closed = len(pts) > 3 and np.allclose(pts[0], pts[-1])
    if closed and not np.allclose(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[:1]])
        times = list(times) + [None]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(seg <= 1e-12):
        i = int(np.flatnonzero(seg <= 1e-12)[0])
        raise DegenerateSegmentError(f"waypoints {i} and {i + 1} coincide")

    if all(t is not None for t in times):
        t_knots = np.asarray(times, dtype=float)
        if np.any(np.diff(t_knots) <= 0):
            raise ValueError("waypoint times must be strictly increasing")
        geo = None
    else:
        dts, geo, s_knots = _segment_times(pts, closed, average_speed, params, curvature_gain)
        t_knots = np.concatenate([[0.0], np.cumsum(dts)])

    start_dir = end_dir = None
    if not closed:
        if geo is None:
            chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            s_knots = np.concatenate([[0.0], np.cumsum(chord)])
            geo = _fit_spline(s_knots, pts, False, None, None)
        # endpoint velocity: geometric tangent at the mean speed of the end segment
        d0 = geo.derivative(1)(s_knots[0])
        d1 = geo.derivative(1)(s_knots[-1])
        start_dir = d0 / np.linalg.norm(d0) * (s_knots[1] - s_knots[0]) / (t_knots[1] - t_knots[0])
        end_dir = d1 / np.linalg.norm(d1) * (s_knots[-1] - s_knots[-2]) / (t_knots[-1] - t_knots[-2])
    spline = _fit_spline(t_knots - t_knots[0], pts, closed, start_dir, end_dir)

    T = t_knots[-1] - t_knots[0]
    n_samples = int(np.floor(T / params.ts + 1e-9)) + (0 if closed else 1)
    t = np.arange(n_samples) * params.ts
    derivs = [spline(t)] + [spline.derivative(k)(t) for k in (1, 2, 3)]
    flat = np.column_stack([np.asarray(d)[:, j] for d in derivs for j in (0, 1)])
    traj = build_reference(t, flat, params, r_d=r_d)
    if check_speed and np.max(traj.u_r[:, 0]) > params.v_max:
        raise InfeasibleSpeedError(
            f"reference speed reaches {np.max(traj.u_r[:, 0]):.4f} m/s > v_max={params.v_max}")
    if np.max(np.abs(traj.q_r[:, 3])) > params.phi_max:
        warnings.warn("reference steering angle exceeds phi_max", RuntimeWarning, stacklevel=2)
    return traj


def interpolate_max_speed(waypoints, max_speed: float, params: CarParams, **kwargs):
    """Like :func:`interpolate`, with time scaled so the peak reference speed is ``max_speed``."""
    avg = max_speed
    for _ in range(3):
        traj = interpolate(waypoints, avg, params, check_speed=False, **kwargs)
        peak = float(np.max(traj.u_r[:, 0]))
        avg *= max_speed / peak
    traj = interpolate(waypoints, avg, params, **kwargs)
    return traj


# --- file formats -----------------------------------------------------------------

def read_waypoints(path) -> list[Waypoint]:
    """Read a ``x,y[,t]`` CSV file (header required, ``#`` comments allowed)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"waypoint file not found: {path}")
    with path.open(newline="") as fh:
        rows = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    fields = [f.strip() for f in (reader.fieldnames or [])]
    if fields[:2] != ["x", "y"]:
        raise ValueError(f"{path}: header must start with 'x,y', got {fields}")
    out = []
    for row in reader:
        row = {k.strip(): v for k, v in row.items()}
        t = row.get("t")
        out.append(Waypoint(float(row["x"]), float(row["y"]),
                            float(t) if t not in (None, "") else None))
    return out


def write_waypoints(path, waypoints):
    with Path(path).open("w", newline="") as fh:
        timed = all(len(w) > 2 and w[2] is not None for w in waypoints)
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "t"] if timed else ["x", "y"])
        for w in waypoints:
            writer.writerow([repr(float(w[0])), repr(float(w[1]))] + ([repr(float(w[2]))] if timed else []))


def write_trajectory(path, traj: ReferenceTrajectory):
    table = np.column_stack([traj.t, traj.flat, traj.q_r[:, 2:4], traj.u_r, traj.z_r, traj.w_r])
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# r_d={traj.r_d!r}\n# ts={traj.ts!r}\n")
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in table:
            writer.writerow([repr(float(v)) for v in row])


def read_trajectory(path) -> ReferenceTrajectory:
    meta = {}
    with Path(path).open() as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = float(value)
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != TRAJECTORY_COLUMNS:
        raise ValueError(f"{path}: unexpected trajectory columns {header}")
    data = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(header))
    col = {name: data[:, i] for i, name in enumerate(header)}
    return ReferenceTrajectory(
        t=col["t"],
        flat=np.column_stack([col[c] for c in FLAT_COLUMNS]),
        q_r=np.column_stack([col["x_r"], col["y_r"], col["theta_r"], col["phi_r"]]),
        u_r=np.column_stack([col["v_r"], col["omega_r"]]),
        z_r=np.column_stack([col["z1_r"], col["z2_r"]]),
        w_r=np.column_stack([col["w1_r"], col["w2_r"]]),
        r_d=meta["r_d"], ts=meta.get("ts", 0.01))
