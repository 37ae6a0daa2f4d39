import numpy as np
import pytest
from numpy.testing import assert_allclose

from quatmpc import _kernels, costs, dynamics, quat
from quatmpc.exceptions import NonPositiveDefinite
from quatmpc.ilqr import ALiLQR, LinearQuadraticProblem, SolverSettings, backward_pass, forward_pass
from quatmpc.problem import SrbTrackingProblem

RNG = np.random.default_rng(5)


def lq_instance(rng, n=4, m=2, K=20):
    A = np.eye(n) + 0.1 * rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n, n))
    Q = L @ L.T / n + 0.1 * np.eye(n)
    R = np.diag(rng.uniform(0.1, 1.0, m))
    return LinearQuadraticProblem(A, B, Q, R, 10 * Q, K)


def riccati_gains(p):
    """Textbook finite-horizon recursion, independent of the solver."""
    P = p.Qf
    gains = []
    for _ in range(p.K - 1):
        K = -np.linalg.inv(p.R + p.B.T @ P @ p.B) @ p.B.T @ P @ p.A
        P = p.Q + K.T @ p.R @ K + (p.A + p.B @ K).T @ P @ (p.A + p.B @ K)
        gains.append(K)
    return np.array(gains[::-1])


def condensed_qp(p, x0):
    n, m, N = p.ndx, p.nu, p.K - 1
    S = np.zeros(((N + 1) * n, N * m))
    T = np.zeros(((N + 1) * n, n))
    for k in range(N + 1):
        T[k * n:(k + 1) * n] = np.linalg.matrix_power(p.A, k)
        for j in range(k):
            S[k * n:(k + 1) * n, j * m:(j + 1) * m] = np.linalg.matrix_power(p.A, k - 1 - j) @ p.B
    Qb = np.kron(np.eye(N + 1), p.Q)
    Qb[N * n:, N * n:] = p.Qf
    Rb = np.kron(np.eye(N), p.R)
    Hm = S.T @ Qb @ S + Rb
    g = S.T @ Qb @ (T @ x0 - p.x_ref.reshape(-1))
    return np.linalg.solve(Hm, -g).reshape(N, m)


def test_gains_match_riccati_recursion():
    p = lq_instance(RNG)
    sol = ALiLQR().solve(p, RNG.normal(size=4), np.zeros((p.K - 1, p.nu)))
    assert_allclose(sol.K, riccati_gains(p), atol=1e-8)


def test_double_integrator_matches_dense_qp():
    dt, K = 0.1, 30
    p = LinearQuadraticProblem(
        [[1.0, dt], [0.0, 1.0]], [[0.5 * dt * dt], [dt]], np.diag([1e-2, 1e-2]), [[1e-1]], np.diag([1e3, 1e2]), K,
        x_ref=np.tile([1.0, 0.0], (K, 1)),
    )
    sol = ALiLQR(SolverSettings(grad_tol=1e-10, cost_tol=1e-14)).solve(p, np.zeros(2), np.zeros((K - 1, 1)))
    assert_allclose(sol.U, condensed_qp(p, np.zeros(2)), atol=1e-6)


def test_single_forward_pass_reaches_lq_optimum():
    p = lq_instance(RNG)
    x0 = RNG.normal(size=4)
    U0 = np.zeros((p.K - 1, p.nu))
    X0 = np.array([x0] + [np.zeros(4)] * (p.K - 1))
    for k in range(p.K - 1):
        X0[k + 1] = p.step(k, X0[k], U0[k])
    A, B = p.linearize(X0, U0)
    Ks, ds, *_ = backward_pass(A, B, p.cost_expansion(X0, U0))
    X1, U1 = forward_pass(p, X0, U0, Ks, ds, 1.0)
    assert_allclose(U1, condensed_qp(p, x0), atol=1e-8)
    X2, U2 = forward_pass(p, X0, U0, Ks, np.zeros_like(ds), 0.0)
    assert_allclose(X2, X0)
    assert_allclose(U2, U0)


def test_single_knot_gain_formula():
    p = lq_instance(RNG, K=2)
    X = np.zeros((2, 4))
    U = np.zeros((1, 2))
    A, B = p.linearize(X, U)
    Ks, *_ = backward_pass(A, B, p.cost_expansion(X, U))
    expected = -np.linalg.solve(p.R + p.B.T @ p.Qf @ p.B, p.B.T @ p.Qf @ p.A)
    assert_allclose(Ks[0], expected, atol=1e-12)


def test_compiled_backward_pass_matches_numpy():
    for _ in range(5):
        K, n, m = 12, 6, 3
        A = np.eye(n) + 0.1 * RNG.normal(size=(K - 1, n, n))
        B = RNG.normal(size=(K - 1, n, m))
        lx, lu = RNG.normal(size=(K, n)), RNG.normal(size=(K - 1, m))
        L = RNG.normal(size=(K, n, n))
        lxx = L @ np.swapaxes(L, 1, 2) + np.eye(n)
        luu = np.broadcast_to(np.eye(m), (K - 1, m, m)).copy()
        lux = 0.1 * RNG.normal(size=(K - 1, m, n))
        ref = backward_pass(A, B, (lx, lu, lxx, luu, lux), 0.0)
        Ks, ds, dV1, dV2, gmax, fail = _kernels.riccati(A, B, lx, lu, lxx, luu, lux, 0.0)
        assert fail < 0
        assert_allclose(Ks, ref[0], atol=1e-10)
        assert_allclose(ds, ref[1], atol=1e-10)
        assert_allclose([dV1, dV2], ref[2], rtol=1e-10)
        assert gmax == pytest.approx(ref[5])


def test_indefinite_quu_raises():
    n, m = 2, 1
    A = np.broadcast_to(np.eye(n), (3, n, n))
    B = np.zeros((3, n, m))
    exp = (np.zeros((4, n)), np.zeros((3, m)), np.broadcast_to(np.eye(n), (4, n, n)), -np.ones((3, m, m)), np.zeros((3, m, n)))
    with pytest.raises(NonPositiveDefinite):
        backward_pass(A, B, exp)


def test_box_constraints_satisfied_and_cost_not_worse():
    p = lq_instance(RNG)
    p.u_min, p.u_max = -0.2, 0.2
    x0 = RNG.normal(size=4) * 3
    U0 = np.zeros((p.K - 1, p.nu))
    X0 = np.array([x0] + [np.zeros(4)] * (p.K - 1))
    for k in range(p.K - 1):
        X0[k + 1] = p.step(k, X0[k], U0[k])
    sol = ALiLQR(SolverSettings(constraint_tol=1e-6)).solve(p, x0, U0)
    assert sol.report.max_violation <= 1e-6
    assert np.all(np.abs(sol.U) <= 0.2 + 1e-6)
    assert sol.report.cost <= p.cost(X0, U0)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(penalty_scale=1.0)
    with pytest.raises(ValueError):
        SolverSettings(reg_init=-1.0)


def go1_hover_problem(K=20):
    model = dynamics.builtin_robot("go1")
    x0 = dynamics.make_state(r=(0.0, 0.0, model.nominal_height))
    feet = x0[0:3] + quat.rotate(x0[3:7], model.contact_points)
    feet[:, 2] = 0.0
    X_ref = np.tile(x0, (K, 1))
    U_ref = np.tile([0.0, 0.0, model.weight / 4], (K - 1, 4))
    cset = costs.ConstraintSet.for_model(model, mu=0.5)
    flags = np.ones((K - 1, 4), bool)
    return model, SrbTrackingProblem(model, X_ref, U_ref, flags, feet, costs.CostWeights(), cset), x0, U_ref


def test_trivial_hover_converges_immediately():
    _, p, x0, U_ref = go1_hover_problem()
    sol = ALiLQR().solve(p, x0, U_ref)
    assert sol.report.converged
    assert sol.report.inner_iterations <= 2
    assert np.all(np.isfinite(sol.K))


def test_friction_bounds_hold_at_solution():
    model, p, x0, U_ref = go1_hover_problem()
    x_off = dynamics.retract(x0, np.r_[0.05, -0.03, 0.02, 0.1, -0.1, 0.05, np.zeros(6)])
    sol = ALiLQR().solve(p, x_off, U_ref)
    con = p.constraints(sol.X, sol.U)
    assert np.max(np.where(con.enabled & ~con.is_eq, con.c, -np.inf)) <= SolverSettings().constraint_tol


def test_kernel_rollout_matches_python_loop():
    _, p, x0, U_ref = go1_hover_problem()
    U = U_ref + RNG.normal(size=U_ref.shape)
    X = p.rollout(x0, U)
    x = x0
    for k in range(len(U)):
        x = dynamics.discrete_dynamics(p.model, x, U[k], p.feet, p.dt)
        assert_allclose(X[k + 1], x, atol=1e-12)
