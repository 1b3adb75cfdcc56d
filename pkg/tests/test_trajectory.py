import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flmpc.exceptions import DegenerateSegmentError, InfeasibleSpeedError, StallError
from flmpc.trajectory import (Waypoint, build_reference, interpolate, interpolate_max_speed,
                              linearized_reference, read_trajectory, read_waypoints,
                              reference_input, reference_state, write_trajectory,
                              write_waypoints)
from flmpc.simulation import SCENARIOS, SPEEDS, load_scenario
from flmpc.vehicle import CarParams

P = CarParams()


def circle_flat(t, R, v, phase=0.0):
    a = v / R * t + phase
    c, s = np.cos(a), np.sin(a)
    k = v / R
    return np.column_stack([R * c, R * s, -v * s, v * c, -v * k * c, -v * k * s,
                            v * k * k * s, -v * k * k * c])


def poly_flat(t):
    # x = t, y = t^3 / 6: curvature grows linearly, jerk is constant
    one, zero = np.ones_like(t), np.zeros_like(t)
    return np.column_stack([t, t ** 3 / 6, one, t ** 2 / 2, zero, t, zero, one])


def test_reference_state_examples():
    th, ph = reference_state([0, 0, 1, 0, 0, 0, 0, 0], P)
    assert th == 0 and ph == 0
    th, ph = reference_state([0, 0, 0, 0.5, -0.1, 0, 0, 0], P)
    assert th == pytest.approx(np.pi / 2)
    assert ph == pytest.approx(np.arctan(0.4 * P.l), abs=1e-15)


def test_reference_input_examples():
    v, w = reference_input([0, 0, 1, 0, 0, 0, 0, 0], P)
    assert (v, w) == (1, 0)


def test_stall():
    with pytest.raises(StallError):
        reference_state([0, 0, 0, 0, 1, 0, 0, 0], P)
    with pytest.raises(StallError):
        reference_input([0, 0, 1e-7, 0, 1, 0, 0, 0], P)


@pytest.mark.parametrize("R,v", [(2.0, 0.5), (0.8, 0.3), (5.0, 1.0)])
def test_circle_closed_form(R, v):
    t = np.linspace(0, 10, 101)
    th, ph = reference_state(circle_flat(t, R, v), P)
    _, om = reference_input(circle_flat(t, R, v), P)
    assert np.allclose(ph, np.arctan(P.l / R), atol=1e-12)
    assert np.max(np.abs(om)) < 1e-12


def test_omega_is_phi_rate():
    h = 1e-4
    t = np.linspace(-1.5, 1.5, 31)
    _, om = reference_input(poly_flat(t), P)
    _, ph_p = reference_state(poly_flat(t + h), P)
    _, ph_m = reference_state(poly_flat(t - h), P)
    assert np.allclose(om, (ph_p - ph_m) / (2 * h), atol=1e-4)
    assert np.max(np.abs(om)) > 0.05


def test_linearized_reference_examples():
    z, w = linearized_reference(np.zeros(4), np.array([1.0, 0.0]), P)
    assert np.allclose(z, (0.606, 0)) and np.allclose(w, (1, 0))


@given(st.floats(-np.pi, np.pi), st.floats(0.2, 2.0), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-1, 1), st.floats(-1, 1))
def test_reference_rotation_equivariance(alpha, speed, ax, ay, jx, jy):
    flat = np.array([0, 0, speed, 0, ax, ay, jx, jy], dtype=float)
    R = np.array([[np.cos(alpha), -np.sin(alpha)], [np.sin(alpha), np.cos(alpha)]])
    rot = np.concatenate([R @ flat[i:i + 2] for i in range(0, 8, 2)])
    th0, ph0 = reference_state(flat, P)
    th1, ph1 = reference_state(rot, P)
    assert np.angle(np.exp(1j * (th1 - th0 - alpha))) == pytest.approx(0, abs=1e-9)
    assert ph1 == pytest.approx(ph0, abs=1e-9)
    assert np.allclose(reference_input(flat, P), reference_input(rot, P), atol=1e-9)


def test_straight_line():
    traj = interpolate([(0, 0), (3, 1.5)], 0.5, P)
    assert np.max(np.abs(traj.q_r[:, 3])) < 1e-9
    assert np.max(np.abs(traj.u_r[:, 1])) < 1e-9
    assert np.allclose(traj.q_r[:, 2], np.arctan2(1.5, 3))
    assert traj.t[1] - traj.t[0] == pytest.approx(0.01)


def test_interpolated_circle():
    ang = np.linspace(0, 2 * np.pi, 17)
    wps = np.column_stack([2 * np.cos(ang), 2 * np.sin(ang)])
    wps[-1] = wps[0]
    traj = interpolate(wps, 0.5, P)
    assert np.median(traj.q_r[:, 3]) == pytest.approx(np.arctan(0.256 / 2), abs=2e-3)
    assert np.max(np.abs(traj.u_r[:, 1])) < 0.02
    assert np.isfinite(traj.gamma) and traj.gamma > 2


def test_degenerate_segment():
    with pytest.raises(DegenerateSegmentError):
        interpolate([(0, 0), (1, 0), (1, 0), (2, 1)], 0.5, P)


def test_infeasible_speed():
    with pytest.raises(InfeasibleSpeedError):
        interpolate([(0, 0), (10, 0)], 3.0, P)


def test_bad_arguments():
    with pytest.raises(ValueError):
        interpolate([(0, 0)], 0.5, P)
    with pytest.raises(ValueError):
        interpolate([(0, 0), (1, 0)], 0.0, P)


def test_supplied_times():
    traj = interpolate([Waypoint(0, 0, 0.0), Waypoint(1, 0, 2.0), Waypoint(2, 1, 4.0)], 1.0, P)
    assert traj.duration == pytest.approx(4.0)
    assert np.allclose(traj.flat[200, :2], (1, 0), atol=1e-9)


def test_spline_smoothness_at_knots():
    wps = [(0, 0), (1, 0.5), (2, 0.2), (3, 1.0)]
    traj = interpolate(wps, 0.5, P)
    # derivatives are continuous: consecutive samples never jump
    for col in range(2, 8):
        steps = np.abs(np.diff(traj.flat[:, col]))
        assert np.max(steps) < 0.05 * (1 + np.max(np.abs(traj.flat[:, col])))


@pytest.mark.parametrize("name", sorted(SCENARIOS))
@pytest.mark.parametrize("speed", SPEEDS)
def test_shipped_scenarios(name, speed):
    traj = load_scenario(name, speed, P)
    assert np.max(traj.u_r[:, 0]) == pytest.approx(speed, rel=1e-3)
    assert traj.r_d >= traj.max_w_r
    assert np.max(np.abs(traj.q_r[:, 3])) < P.phi_max
    assert np.all(np.abs(np.diff(traj.q_r[:, 2])) < 0.1)  # unwrapped heading
    d_phi = (traj.q_r[2:, 3] - traj.q_r[:-2, 3]) / (2 * P.ts)
    assert np.max(np.abs(d_phi - traj.u_r[1:-1, 1])) < 1e-3


def test_window_holds_last_sample(oval):
    w = oval.window(len(oval) - 2, 5)
    assert w.shape == (5, 2)
    assert np.all(w[1:] == oval.w_r[-1])


def test_max_speed_scaling():
    traj = interpolate_max_speed([(0, 0), (3, 1), (6, 0), (9, 1)], 0.4, P)
    assert np.max(traj.u_r[:, 0]) == pytest.approx(0.4, rel=1e-3)


def test_files_round_trip(tmp_path, oval):
    wp = [Waypoint(0, 0), Waypoint(1, 2), Waypoint(3, 1)]
    write_waypoints(tmp_path / "w.csv", wp)
    assert read_waypoints(tmp_path / "w.csv") == wp
    write_trajectory(tmp_path / "t.csv", oval)
    back = read_trajectory(tmp_path / "t.csv")
    assert back.r_d == oval.r_d and back.ts == oval.ts
    for f in ("t", "flat", "q_r", "u_r", "z_r", "w_r"):
        assert np.array_equal(getattr(back, f), getattr(oval, f))


def test_missing_waypoint_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_waypoints(tmp_path / "nope.csv")


def test_rd_override():
    t = np.arange(10) * P.ts
    traj = build_reference(t, circle_flat(t, 2.0, 0.5), P, r_d=11.54)
    assert traj.r_d == 11.54
    assert build_reference(t, circle_flat(t, 2.0, 0.5), P).r_d == pytest.approx(1.05 * traj.max_w_r)


def test_steering_warning():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        ang = np.linspace(0, 2 * np.pi, 9)
        wps = np.column_stack([0.3 * np.cos(ang), 0.3 * np.sin(ang)])
        wps[-1] = wps[0]
        interpolate(wps, 0.2, P)
    assert any("phi_max" in str(r.message) for r in rec)
