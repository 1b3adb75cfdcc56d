import numpy as np
import pytest
from hypothesis import given, strategies as st

from flmpc.exceptions import SteeringSingularityError
from flmpc.linearization import (apply_input_matrix, constraint_polytope, error_step,
                                 fl_discrete_step, input_matrix, input_matrix_det,
                                 input_matrix_inv, inscribed_radii, internal_matrix,
                                 output_transform, polytope_rows, worst_case_disc)
from flmpc.vehicle import BOX_T, CarParams, continuous_derivative, step_discrete

P = CarParams()
angle = st.floats(-np.pi, np.pi)
steer = st.floats(-0.6, 0.6)


def numeric_vertices(L, g):
    """Corners of the half-plane pairs imaging (-v,-w), (-v,+w), (+v,+w), (+v,-w)."""
    pairs = [(0, 1), (0, 3), (2, 3), (2, 1)]
    return np.array([np.linalg.solve(L[list(p)], g[list(p)]) for p in pairs])


def test_output_transform_examples():
    assert np.allclose(output_transform((0, 0, 0, 0), P), (0.606, 0))
    assert np.allclose(output_transform((1, 2, np.pi / 2, 0), P), (1, 2.606))
    assert np.allclose(output_transform((0, 0, 0, 0.6), P),
                       (0.256 + 0.35 * np.cos(0.6), 0.35 * np.sin(0.6)))


def test_input_matrix_at_zero():
    assert np.allclose(input_matrix((0, 0), P), [[1, 0], [0, 0.35]])
    assert np.allclose(internal_matrix((0, 0), P), [[0, 0], [0, 1 / 0.35]])


def test_inverse_contract():
    M = input_matrix((np.pi / 3, 0.2), P)
    assert not np.allclose(M.T @ M, np.eye(2))
    assert np.allclose(M @ input_matrix_inv((np.pi / 3, 0.2), P), np.eye(2), atol=1e-12)


@given(angle, st.floats(-1.5, 1.5))
def test_determinant(e1, e2):
    assert np.linalg.det(input_matrix((e1, e2), P)) == pytest.approx(input_matrix_det(e2, P), abs=1e-12, rel=1e-12)


@given(angle, steer, st.floats(-1, 1), st.floats(-10, 10))
def test_chain_rule(e1, e2, v, w):
    u = np.array([v, w])
    lhs = internal_matrix((e1, e2), P) @ input_matrix((e1, e2), P) @ u
    rhs = continuous_derivative((0, 0, e1, e2), u, P)[2:]
    assert np.allclose(lhs, rhs, atol=1e-10)


@given(angle, steer, st.floats(-1, 1), st.floats(-10, 10))
def test_apply_matches_matrix(e1, e2, v, w):
    assert np.allclose(apply_input_matrix((e1, e2), (v, w), P),
                       input_matrix((e1, e2), P) @ [v, w], atol=1e-13)


def test_singular_steering():
    for fn in (lambda: input_matrix((0, np.pi / 2), P), lambda: internal_matrix((0, -2.0), P),
               lambda: constraint_polytope((0, 0.7), P), lambda: inscribed_radii(0.61, P)):
        with pytest.raises(SteeringSingularityError):
            fn()


def test_fl_step_examples():
    z, eta = fl_discrete_step((0.3, 0.4), (0.5, 0.3), (0, 0), P)
    assert np.allclose(z, (0.3, 0.4)) and np.allclose(eta, (0.5, 0.3))
    assert np.allclose(internal_matrix((0.5, 0.3), P) @ [0, 0], 0)
    z, _ = fl_discrete_step((0, 0), (0, 0), (1, 2), P)
    assert np.allclose(z, (0.01, 0.02))


def test_error_step_examples(rng):
    assert np.allclose(error_step((0.2, -0.1), (1, 2), (1, 2), P), (0.2, -0.1))
    assert np.allclose(error_step((1, 0), (0, 0), (1, 0), P), (0.99, 0))
    # iterating the error equals the difference of two linearized runs
    z, zr, eta, eta_r = np.array([0.3, 0.1]), np.array([0.2, 0.0]), np.array([0.1, 0.2]), np.array([0.0, 0.1])
    e = z - zr
    for _ in range(20):
        w, wr = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        z, eta = fl_discrete_step(z, eta, w, P)
        zr, eta_r = fl_discrete_step(zr, eta_r, wr, P)
        e = error_step(e, w, wr, P)
    assert np.allclose(e, z - zr, atol=1e-12)


@given(angle, steer, st.floats(-1, 1), st.floats(-10, 10))
def test_internal_state_commutes(th, phi, v, w):
    q = np.array([0.4, -0.2, th, phi])
    u = np.array([v, w])
    _, eta = fl_discrete_step(output_transform(q, P), q[2:], input_matrix(q[2:], P) @ u, P)
    assert np.allclose(eta, np.array(step_discrete(q, u, P))[2:], atol=1e-12)


@given(angle, steer, st.floats(-1, 1), st.floats(-10, 10))
def test_output_commutes_to_second_order(th, phi, v, w):
    # Euler on the car and on the linearized model differ by O(ts^2) in z
    q = np.array([0.0, 0.0, th, phi])
    u = np.array([v, w])
    z, _ = fl_discrete_step(output_transform(q, P), q[2:], input_matrix(q[2:], P) @ u, P)
    z_car = output_transform(step_discrete(q, u, P), P)
    rate = abs(v) / P.l * np.tan(abs(phi)) + abs(w)
    bound = P.ts ** 2 * (P.l + P.delta) * (rate ** 2 + abs(w) * rate + w ** 2 + 1e-9)
    assert np.all(np.abs(z - z_car) <= bound)


def test_rectangle_at_zero():
    poly = constraint_polytope((0, 0), P)
    assert np.allclose(poly.vertices, [[-1, -3.5], [-1, 3.5], [1, 3.5], [1, -3.5]])
    assert np.allclose(poly.L, [[-1, 0], [0, -1 / 0.35], [1, 0], [0, 1 / 0.35]])


@given(angle, steer)
def test_polytope_geometry(e1, e2):
    poly = constraint_polytope((e1, e2), P)
    V = poly.vertices
    assert np.allclose(V[0], -V[2], atol=0) and np.allclose(V[1], -V[3], atol=0)
    assert np.allclose(V, numeric_vertices(poly.L, poly.g), atol=1e-9)
    # each vertex activates exactly two rows
    slack = poly.g - V @ poly.L.T
    assert np.all(slack >= -1e-9)
    assert np.all(np.sum(np.abs(slack) <= 1e-9, axis=1) == 2)
    # rows 1/3 and 2/4 antiparallel
    assert np.allclose(poly.L[0], -poly.L[2]) and np.allclose(poly.L[1], -poly.L[3])
    assert np.allclose(poly.L, BOX_T @ input_matrix_inv((e1, e2), P))


@given(angle, steer, st.floats(0, 2 * np.pi))
def test_box_boundary_maps_to_polytope_boundary(e1, e2, a):
    # a point on the box boundary
    u = np.array([np.cos(a), np.sin(a)])
    u = u / np.max(np.abs(u / [P.v_max, P.omega_max]))
    w = input_matrix((e1, e2), P) @ u
    slack = P.g - polytope_rows((e1, e2), P) @ w
    assert np.min(slack) == pytest.approx(0, abs=1e-9)


def test_radii_examples():
    r1, r2 = inscribed_radii(0.0, P)
    assert r1 == pytest.approx(3.5) and r2 == pytest.approx(1.0)


@given(angle, steer)
def test_radii_are_half_widths(e1, e2):
    r1, r2 = inscribed_radii(e2, P)
    L = polytope_rows((e1, e2), P)
    widths = P.g[:2] / np.linalg.norm(L[:2], axis=1)  # distance from origin to rows -v and -omega
    assert widths[0] == pytest.approx(r2, rel=1e-12)
    assert widths[1] == pytest.approx(r1, rel=1e-12)
    r = min(r1, r2)
    d = np.column_stack([np.cos(np.linspace(0, 2 * np.pi, 360, endpoint=False)),
                         np.sin(np.linspace(0, 2 * np.pi, 360, endpoint=False))])
    assert np.all((r * d) @ L.T <= P.g + 1e-9)


def test_min_radius_at_zero_steering():
    grid = np.linspace(-P.phi_max, P.phi_max, 1201)
    mins = np.array([min(inscribed_radii(e, P)) for e in grid])
    assert mins.min() == pytest.approx(min(inscribed_radii(0.0, P)))
    # r1 on its own shrinks with steering; only the pair's minimum sits at zero
    assert inscribed_radii(0.6, P)[0] < inscribed_radii(0.0, P)[0]


def test_worst_case_disc():
    assert worst_case_disc(P).r_hat == 1.0
    first = 0.35 * 0.256 * 10 / np.hypot(0.35, 0.256)
    assert first == pytest.approx(2.0662, abs=1e-3)
    assert worst_case_disc(CarParams(omega_max=1e-9)).r_hat < 1e-8


def test_worst_case_disc_contained(rng):
    r = worst_case_disc(P).r_hat
    d = np.column_stack([np.cos(np.linspace(0, 2 * np.pi, 360, endpoint=False)),
                         np.sin(np.linspace(0, 2 * np.pi, 360, endpoint=False))])
    for e1, e2 in zip(rng.uniform(-np.pi, np.pi, 500), rng.uniform(-0.6, 0.6, 500)):
        poly = constraint_polytope((e1, e2), P)
        assert np.all((r * d) @ poly.L.T <= poly.g + 1e-9)
