import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from quatmpc import costs, dynamics, quat
from quatmpc.costs import ConstraintSet, CostWeights

RNG = np.random.default_rng(11)

quats = st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1)


def test_quat_cost_values():
    q = quat.random_unit(RNG)
    assert costs.quat_cost(q, q) == pytest.approx(0.0, abs=1e-15)
    assert costs.quat_cost(-q, q) == pytest.approx(0.0, abs=1e-15)
    assert costs.quat_cost([0.0, 0.0, 0.0, 1.0], quat.IDENTITY) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(quats, quats)
def test_quat_cost_sign_invariance(a, b):
    q, qr = quat.normalize(np.array(a)), quat.normalize(np.array(b))
    c = costs.quat_cost(q, qr)
    assert costs.quat_cost(-q, qr) == pytest.approx(c, abs=1e-15)
    assert costs.quat_cost(q, -qr) == pytest.approx(c, abs=1e-15)


def test_quat_cost_monotonic_in_angle():
    axis = RNG.normal(size=3)
    qr = quat.random_unit(RNG)
    angles = np.linspace(0.0, np.pi, 50)
    vals = [costs.quat_cost(quat.compose(qr, quat.from_axis_angle(axis, a)), qr) for a in angles]
    assert np.all(np.diff(vals) > 0)


def test_quat_cost_gradient_matches_finite_differences():
    eps = 1e-6
    for _ in range(100):
        q, qr = quat.random_unit(RNG), quat.random_unit(RNG)
        if abs(np.dot(q, qr)) < 1e-3:
            continue
        g = costs.quat_cost_gradient(q, qr)
        num = np.array(
            [
                (costs.quat_cost(quat.quat_mul(q, quat.cayley(e)), qr) - costs.quat_cost(quat.quat_mul(q, quat.cayley(-e)), qr)) / (2 * eps)
                for e in np.eye(3) * eps
            ]
        )
        assert_allclose(g, num, atol=1e-6)
        assert_allclose(costs.quat_cost_gradient(q, -qr), g, atol=1e-15)
    assert_allclose(costs.quat_cost_gradient(qr, qr), np.zeros(3), atol=1e-15)


def test_quat_cost_hessian_values():
    qr = quat.random_unit(RNG)
    assert_allclose(costs.quat_cost_hessian(qr, qr), np.eye(3))
    q120 = quat.compose(qr, quat.from_axis_angle([1.0, 2.0, 3.0], 2 * np.pi / 3))
    assert_allclose(costs.quat_cost_hessian(q120, qr), 0.5 * np.eye(3), atol=1e-12)
    for _ in range(20):
        Hq = costs.quat_cost_hessian(quat.random_unit(RNG), qr)
        assert np.linalg.eigvalsh(Hq).min() >= 0.0


def test_quat_cost_hessian_matches_second_differences():
    eps = 1e-4
    for _ in range(20):
        q, qr = quat.random_unit(RNG), quat.random_unit(RNG)
        if abs(np.dot(q, qr)) < 0.05:
            continue

        def f(p):
            return costs.quat_cost(quat.quat_mul(q, quat.cayley(p)), qr)

        num = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                ei, ej = np.eye(3)[i] * eps, np.eye(3)[j] * eps
                num[i, j] = (f(ei + ej) - f(ei - ej) - f(-ei + ej) + f(-ei - ej)) / (4 * eps * eps)
        assert_allclose(costs.quat_cost_hessian(q, qr), num, atol=1e-4)


def test_ridge_sign_logs_warning(caplog):
    q = quat.IDENTITY
    qr = np.array([0.0, 1.0, 0.0, 0.0])
    with caplog.at_level(logging.WARNING, logger="quatmpc.costs"):
        g = costs.quat_cost_gradient(q, qr)
    assert "ridge" in caplog.text
    assert_allclose(g, -quat.attitude_jacobian(q).T @ qr)


def random_state(rng):
    return dynamics.make_state(rng.normal(size=3), quat.random_unit(rng), rng.normal(size=3), rng.normal(size=3))


def test_stage_expansion_at_reference():
    w = CostWeights()
    x = random_state(RNG)
    u = RNG.normal(size=12)
    e = costs.stage_expansion(x, u, x, u, w)
    assert e.l == pytest.approx(0.0, abs=1e-12)
    assert_allclose(e.lx, np.zeros(12), atol=1e-12)
    assert_allclose(e.lu, np.zeros(12))
    expected = np.diag(np.concatenate([w.w_r, np.full(3, w.w_q), w.w_v, w.w_w]))
    assert_allclose(e.lxx, expected)
    assert_allclose(e.luu, np.eye(12) * 1e-4)


def test_stage_gradient_matches_error_state_finite_differences():
    w = CostWeights(w_r=[5, 5, 10], w_q=30.0, w_v=[1, 1, 1], w_w=[0.4, 0.4, 0.4], r_u=1e-2)
    eps = 1e-6
    for _ in range(20):
        x, xr = random_state(RNG), random_state(RNG)
        if abs(np.dot(x[3:7], xr[3:7])) < 1e-3:
            continue
        u, ur = RNG.normal(size=12), RNG.normal(size=12)
        e = costs.stage_expansion(x, u, xr, ur, w)
        num = np.array(
            [
                (costs.stage_cost(dynamics.retract(x, d), u, xr, ur, w) - costs.stage_cost(dynamics.retract(x, -d), u, xr, ur, w)) / (2 * eps)
                for d in np.eye(12) * eps
            ]
        )
        assert_allclose(e.lx, num, atol=1e-6 * max(1.0, np.abs(num).max()))
        numu = np.array(
            [(costs.stage_cost(x, u + d, xr, ur, w) - costs.stage_cost(x, u - d, xr, ur, w)) / (2 * eps) for d in np.eye(12) * eps]
        )
        assert_allclose(e.lu, numu, atol=1e-6)
        assert np.linalg.eigvalsh(e.lxx).min() >= 0.0


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(w_q=-1.0)
    with pytest.raises(ValueError):
        CostWeights(r_u=0.0)


def test_friction_constraints_inactive_at_nominal_share():
    cset = ConstraintSet(mu=0.5, f_max=100.0)
    fz = 12.0 * 9.81 / 4
    u = np.tile([0.0, 0.0, fz], 4)
    con = costs.friction_constraints(u, np.ones(4, bool), cset)
    ineq = con.enabled & ~con.is_eq
    assert ineq.sum() == 24
    assert np.all(con.c[ineq] < 0)
    assert not np.any(con.enabled & con.is_eq)


def test_friction_constraint_violation_and_swing():
    cset = ConstraintSet(mu=0.5, f_max=100.0)
    fz = 20.0
    u = np.zeros(12)
    u[0:3] = [0.5 * fz + 1.0, 0.0, fz]
    u[3:6] = [1.0, -2.0, 3.0]
    flags = np.array([True, False, True, True])
    con = costs.friction_constraints(u, flags, cset)
    assert con.c[0] == pytest.approx(1.0)
    r = costs.ROWS_PER_FOOT
    assert_allclose(con.c[r + 6:r + 9], [1.0, -2.0, 3.0])
    assert np.all(con.is_eq[r + 6:r + 9])
    assert not np.any(con.enabled[r:r + 6])


def test_friction_cone_rows_are_homogeneous():
    cset = ConstraintSet(mu=0.7, f_min=0.0, f_max=1e9)
    u = RNG.normal(size=12) * 10
    flags = np.ones(4, bool)
    c1 = costs.friction_constraints(u, flags, cset).c
    c3 = costs.friction_constraints(3.0 * u, flags, cset).c
    cone = np.concatenate([np.arange(4) + costs.ROWS_PER_FOOT * i for i in range(4)])
    assert_allclose(c3[cone], 3.0 * c1[cone])


def test_friction_jacobian_matches_residual():
    cset = ConstraintSet(mu=0.6, normals=[[0, 1, 0], [0, -1, 0], [0, 1, 0], [0, -1, 0]])
    u = RNG.normal(size=12) * 10
    flags = np.array([True, True, False, True])
    con = costs.friction_constraints(u, flags, cset)
    offs = costs.friction_constraints(np.zeros(12), flags, cset).c
    assert_allclose(con.cu @ u + offs, con.c, atol=1e-12)


def test_torque_constraints():
    con = costs.torque_constraints(np.array([5.0, -1.0]), 4.0)
    assert_allclose(con.c, [1.0, -9.0, -5.0, -3.0])


def test_project_force_lands_in_pyramid():
    for _ in range(50):
        F = RNG.normal(size=3) * 50
        P = costs.project_force(F, [0.0, 0.0, 1.0], 0.6, 0.0, 80.0)
        assert 0.0 <= P[2] <= 80.0
        assert abs(P[0]) <= 0.6 * P[2] + 1e-12
        assert abs(P[1]) <= 0.6 * P[2] + 1e-12


def test_landing_target_cases():
    assert_allclose(costs.landing_target(quat.IDENTITY), quat.IDENTITY)
    r = 1.0 / np.sqrt(2.0)
    assert_allclose(costs.landing_target([0.5, 0.5, 0.5, 0.5]), [r, 0.0, 0.0, r])
    assert_allclose(costs.landing_target([0.0, 0.6, 0.8, 0.0]), quat.IDENTITY)


def test_landing_target_beats_yaw_grid():
    yaw = np.arange(0.0, 2 * np.pi, 1e-4)
    grid = np.stack([np.cos(yaw / 2), 0 * yaw, 0 * yaw, np.sin(yaw / 2)], axis=-1)
    worst = -np.inf
    for _ in range(1000):
        q0 = quat.random_unit(RNG)
        t = costs.landing_target(q0)
        assert t[1] == 0.0 and t[2] == 0.0
        assert abs(np.linalg.norm(t) - 1.0) <= 1e-12
        best = np.min(1.0 - np.abs(grid @ q0))
        worst = max(worst, costs.quat_cost(q0, t) - best)
    assert worst <= 1e-8
