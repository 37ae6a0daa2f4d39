"""Numerical self-checks run by ``quatmpc verify``.

Every check compares a closed-form or solver output against an independent
oracle (finite differences, a standalone Riccati recursion, a dense QP, a
brute-force grid, a ballistic formula) and reports the largest error seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import costs, dynamics, quat, sim
from .ilqr import ALiLQR, LinearQuadraticProblem, SolverSettings


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self):
        return bool(np.isfinite(self.max_error) and self.max_error <= self.tolerance)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<38} max_err={self.max_error:.3e}  tol={self.tolerance:.1e}  ({self.seconds:.2f} s)"


def _rel(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


def _chart_grad(f, q, eps=1e-6):
    g = np.empty(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        g[i] = (f(quat.compose(q, quat.cayley(e))) - f(quat.compose(q, quat.cayley(-e)))) / (2 * eps)
    return g


def _chart_hess(f, q, eps=1e-4):
    H = np.empty((3, 3))
    I = np.eye(3) * eps
    for i in range(3):
        for j in range(3):
            vals = [
                f(quat.compose(q, quat.cayley(si * I[i] + sj * I[j])))
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1))
            ]
            H[i, j] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * eps * eps)
    return H


def quaternion_calculus(n=100, seed=0, grad_fault=0.0):
    """Attitude Jacobian, quaternion-function Jacobian, scalar Hessian, cost gradient and Hessian.

    Returns five :class:`CheckResult` objects.  ``grad_fault`` perturbs the
    analytic cost gradient (regression hook for the release gate).
    """
    rng = np.random.default_rng(seed)
    errs = {k: 0.0 for k in ("G", "jac", "hess", "cost_grad", "cost_hess")}
    t0 = time.perf_counter()
    eps = 1e-6
    for _ in range(n):
        q = quat.random_unit(rng)
        qb = quat.random_unit(rng)
        b = quat.random_unit(rng)
        # attitude Jacobian: d/dphi q (x) cayley(phi) at 0
        G_num = np.empty((4, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            G_num[:, i] = (quat.compose(q, quat.cayley(e)) - quat.compose(q, quat.cayley(-e))) / (2 * eps)
        errs["G"] = max(errs["G"], _rel(G_num, quat.attitude_jacobian(q)))

        # quaternion-valued map f(q) = q (x) q (x) b
        def f(p):
            return quat.quat_mul(quat.quat_mul(p, p), b)

        fq = f(q)
        dfdq = quat.rmat(quat.quat_mul(q, b)) + quat.lmat(q) @ quat.rmat(b)
        J = quat.quat_fn_jacobian(dfdq, q, fq)
        J_num = np.empty((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            plus = quat.cayley_inv(quat.quat_mul(quat.conj(fq), f(quat.compose(q, quat.cayley(e)))))
            minus = quat.cayley_inv(quat.quat_mul(quat.conj(fq), f(quat.compose(q, quat.cayley(-e)))))
            J_num[:, i] = (plus - minus) / (2 * eps)
        errs["jac"] = max(errs["jac"], _rel(J_num, J))

        # scalar h(q) = w . vec(q (x) v^ (x) conj(q)), a quadratic form q^T M q
        w, v = rng.normal(size=3), rng.normal(size=3)

        def h(p):
            return float(w @ quat.quat_mul(quat.quat_mul(p, quat.hat_vec(v)), quat.conj(p))[1:])

        M = np.empty((4, 4))
        basis = np.eye(4)
        for i in range(4):
            for j in range(4):
                M[i, j] = 0.25 * (
                    h(basis[i] + basis[j]) - h(basis[i] - basis[j])
                )
        dh = 2.0 * M @ q
        H = quat.scalar_fn_hessian(dh, 2.0 * M, q)
        errs["hess"] = max(errs["hess"], _rel(_chart_hess(h, q), H))

        # geodesic cost
        def lq(p):
            return float(costs.quat_cost(p, qb))

        g = costs.quat_cost_gradient(q, qb) * (1.0 + grad_fault)
        errs["cost_grad"] = max(errs["cost_grad"], _rel(_chart_grad(lq, q), g))
        errs["cost_hess"] = max(errs["cost_hess"], _rel(_chart_hess(lq, q), costs.quat_cost_hessian(q, qb)))
    dt = (time.perf_counter() - t0) / 5
    return [
        CheckResult("attitude Jacobian G(q)", errs["G"], 1e-5, dt),
        CheckResult("quaternion-map Jacobian", errs["jac"], 1e-5, dt),
        CheckResult("scalar-function Hessian", errs["hess"], 1e-4, dt),
        CheckResult("geodesic cost gradient", errs["cost_grad"], 1e-5, dt),
        CheckResult("geodesic cost Hessian", errs["cost_hess"], 1e-4, dt),
    ]


def _random_srb(rng, model):
    x = dynamics.make_state(
        rng.normal(scale=0.1, size=3) + [0.0, 0.0, model.nominal_height],
        quat.random_unit(rng),
        rng.normal(scale=0.5, size=3),
        rng.normal(scale=1.0, size=3),
    )
    if model.variant == dynamics.FOOT_FORCE:
        u = rng.normal(scale=20.0, size=model.nu)
        u[2::3] = np.abs(u[2::3]) + 10.0
        feet = x[0:3] + model.contact_points * [1, 1, 0] + rng.normal(scale=0.03, size=(model.n_contacts, 3))
        feet[:, 2] = 0.0
    else:
        u = rng.uniform(-4.0, 4.0, size=model.nu)
        feet = None
    return x, u, feet


def linearization(n=100, seed=1, dt=0.01, eps=1e-6):
    """Error-state ``A, B`` against central differences through :func:`dynamics.retract`."""
    rng = np.random.default_rng(seed)
    out = []
    for name in ("go1", "go1_wheels"):
        model = dynamics.builtin_robot(name)
        t0 = time.perf_counter()
        err = 0.0
        for _ in range(n):
            x, u, feet = _random_srb(rng, model)
            xn = dynamics.discrete_dynamics(model, x, u, feet, dt)
            step = dynamics.linearize(model, x, u, xn, feet, dt)
            A_num = np.empty((12, 12))
            for i in range(12):
                e = np.zeros(12)
                e[i] = eps
                fp = dynamics.discrete_dynamics(model, dynamics.retract(x, e), u, feet, dt)
                fm = dynamics.discrete_dynamics(model, dynamics.retract(x, -e), u, feet, dt)
                A_num[:, i] = (dynamics.state_error(fp, xn) - dynamics.state_error(fm, xn)) / (2 * eps)
            B_num = np.empty((12, model.nu))
            for i in range(model.nu):
                e = np.zeros(model.nu)
                e[i] = eps
                fp = dynamics.discrete_dynamics(model, x, u + e, feet, dt)
                fm = dynamics.discrete_dynamics(model, x, u - e, feet, dt)
                B_num[:, i] = (dynamics.state_error(fp, xn) - dynamics.state_error(fm, xn)) / (2 * eps)
            err = max(err, float(np.max(np.abs(A_num - step.A))), float(np.max(np.abs(B_num - step.B))))
        out.append(CheckResult(f"error-state A, B ({model.variant})", err, 1e-4, time.perf_counter() - t0))
    return out


def riccati_reference(A, B, Q, R, Qf, N):
    """Standalone time-invariant discrete Riccati recursion; returns gains ``K_k`` (u = K x)."""
    P = Qf.copy()
    Ks = [None] * N
    for k in range(N - 1, -1, -1):
        S = R + B.T @ P @ B
        K = -np.linalg.solve(S, B.T @ P @ A)
        P = Q + A.T @ P @ A + A.T @ P @ B @ K
        P = 0.5 * (P + P.T)
        Ks[k] = K
    return np.array(Ks)


def random_lq(rng, n=4, m=2, K=20):
    A = np.eye(n) + 0.1 * rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    Lq = rng.normal(size=(n, n))
    Q = Lq @ Lq.T / n + 0.1 * np.eye(n)
    Lr = rng.normal(size=(m, m))
    R = Lr @ Lr.T / m + 0.1 * np.eye(m)
    Qf = 10.0 * Q
    return LinearQuadraticProblem(A, B, Q, R, Qf, K)


def riccati_oracle(seed=2):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    prob = random_lq(rng)
    x0 = rng.normal(size=prob.ndx)
    sol = ALiLQR(SolverSettings()).solve(prob, x0, np.zeros((prob.K - 1, prob.nu)))
    K_ref = riccati_reference(prob.A, prob.B, prob.Q, prob.R, prob.Qf, prob.K - 1)
    err = _rel(sol.K, K_ref, floor=1.0)
    return CheckResult("LQ gains vs Riccati recursion", err, 1e-8, time.perf_counter() - t0)


def double_integrator(K=30, dt=0.1):
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt * dt], [dt]])
    Q = np.diag([1e-2, 1e-2])
    R = np.array([[1e-1]])
    Qf = np.diag([1e3, 1e2])
    x_ref = np.tile([1.0, 0.0], (K, 1))
    return LinearQuadraticProblem(A, B, Q, R, Qf, K, x_ref=x_ref)


def dense_qp(prob, x0):
    """Condensed least-squares solution of a linear-quadratic problem."""
    n, m, N = prob.ndx, prob.nu, prob.K - 1
    Phi = np.zeros(((N + 1) * n, n))
    Gam = np.zeros(((N + 1) * n, N * m))
    Ak = np.eye(n)
    for k in range(N + 1):
        Phi[k * n:(k + 1) * n] = Ak
        Ak = prob.A @ Ak
    for k in range(1, N + 1):
        for j in range(k):
            Gam[k * n:(k + 1) * n, j * m:(j + 1) * m] = np.linalg.matrix_power(prob.A, k - 1 - j) @ prob.B
    Qbar = np.kron(np.eye(N + 1), prob.Q)
    Qbar[N * n:, N * n:] = prob.Qf
    Rbar = np.kron(np.eye(N), prob.R)
    xr = prob.x_ref.reshape(-1)
    H = Gam.T @ Qbar @ Gam + Rbar
    g = Gam.T @ Qbar @ (Phi @ x0 - xr)
    return np.linalg.solve(H, -g).reshape(N, m)


def qp_oracle():
    t0 = time.perf_counter()
    prob = double_integrator()
    x0 = np.zeros(2)
    sol = ALiLQR(SolverSettings(grad_tol=1e-10, cost_tol=1e-14)).solve(prob, x0, np.zeros((prob.K - 1, 1)))
    U_qp = dense_qp(prob, x0)
    err = float(np.max(np.abs(sol.U - U_qp)))
    return CheckResult("double integrator vs dense QP", err, 1e-6, time.perf_counter() - t0)


def landing_bruteforce(n=1000, seed=3, resolution=1e-4):
    """Closed-form landing target against a yaw grid; error is how much the grid wins by."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    psi = np.arange(0.0, 2 * np.pi, resolution)
    c, s = np.cos(psi / 2), np.sin(psi / 2)
    worst = 0.0
    for q0 in quat.random_unit(rng, n):
        closed = float(costs.quat_cost(costs.landing_target(q0), q0))
        grid = 1.0 - float(np.max(np.abs(c * q0[0] + s * q0[3])))
        worst = max(worst, closed - grid)
    return CheckResult("landing target vs yaw grid", max(worst, 0.0), 1e-8, time.perf_counter() - t0)


def integrator():
    """Ballistic displacement, torque-free momentum and quaternion norm drift."""
    t0 = time.perf_counter()
    model = dynamics.builtin_robot("go1_wheels")
    env = sim.Environment("airborne")
    dt = 1e-3
    x = dynamics.make_state([0.0, 0.0, 10.0])
    for _ in range(1000):
        x = sim.physics_step(env, model, x, np.zeros(2), dt=dt)
    fall = abs((x[2] - 10.0) - (-0.5 * 9.81))
    r1 = CheckResult("free fall 1 s vs 1/2 g t^2 (m)", fall, 1e-4, time.perf_counter() - t0)

    t0 = time.perf_counter()
    x = dynamics.make_state([0.0, 0.0, 10.0], quat.from_axis_angle([1, 2, 3], 0.7), omega=[1.0, -2.0, 3.0])
    L0 = dynamics.angular_momentum_world(model, x)
    for _ in range(1000):
        x = sim.physics_step(env, model, x, np.zeros(2), dt=dt)
    mom = float(np.linalg.norm(dynamics.angular_momentum_world(model, x) - L0) / np.linalg.norm(L0))
    r2 = CheckResult("torque-free angular momentum (rel)", mom, 1e-6, time.perf_counter() - t0)

    t0 = time.perf_counter()
    drift = 0.0
    x = dynamics.make_state([0.0, 0.0, 1e3], quat.from_axis_angle([0, 1, 1], 0.3), omega=[3.0, 1.0, -2.0])
    xm = x.copy()
    u = np.array([0.5, -0.3])
    for _ in range(10_000):
        x = sim.physics_step(env, model, x, u, dt=dt)
        xm = dynamics.discrete_dynamics(model, xm, u, dt=dt)
        drift = max(drift, abs(np.linalg.norm(x[3:7]) - 1.0), abs(np.linalg.norm(xm[3:7]) - 1.0))
    r3 = CheckResult("quaternion norm drift, 1e4 steps", drift, 1e-9, time.perf_counter() - t0)
    return [r1, r2, r3]


def run_all(grad_fault=0.0):
    results = []
    results += quaternion_calculus(grad_fault=grad_fault)
    results += linearization()
    results.append(riccati_oracle())
    results.append(qp_oracle())
    results.append(landing_bruteforce())
    results += integrator()
    return results
