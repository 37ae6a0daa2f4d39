"""Augmented-Lagrangian iLQR over an error-state parameterization.

The solver is agnostic to the state representation.  A problem object
supplies the discrete dynamics, a ``state_error`` that composes deviations
on the state manifold, and derivative blocks expressed in error
coordinates.  For the quaternion SRB problem the error state is 12-dim while
the state is 13-dim; for Euclidean problems the two coincide.

Problem interface (duck typed)::

    K, ndx, nu                      # knots, error-state and control dims
    step(k, x, u) -> x_next
    state_error(x, x_nom) -> dx
    linearize(X, U) -> (A (K-1, ndx, ndx), B (K-1, ndx, nu))
    cost(X, U) -> float
    cost_expansion(X, U) -> (lx, lu, lxx, luu, lux)
    constraints(X, U) -> ConstraintEval | None   # per control knot
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .costs import ConstraintEval
from .exceptions import KinematicSingularity, NearSingularChart, NonPositiveDefinite, RolloutDiverged

log = logging.getLogger(__name__)


@dataclass
class SolverSettings:
    max_outer: int = 10
    max_inner: int = 50
    cost_tol: float = 1e-4
    grad_tol: float = 1e-4
    constraint_tol: float = 1e-4
    penalty_init: float = 10.0
    penalty_scale: float = 10.0
    penalty_max: float = 1e8
    reg_init: float = 0.0
    reg_min: float = 1e-6
    reg_scale: float = 10.0
    reg_max: float = 1e8
    ls_ratio: float = 0.5
    ls_min_step: float = 1.0 / 64.0
    ls_accept: float = 1e-4
    state_bound: float = 1e6
    compiled: bool = True

    def __post_init__(self):
        if self.penalty_scale <= 1 or self.reg_scale <= 1:
            raise ValueError("scale factors must exceed 1")
        if not 0 < self.ls_ratio < 1:
            raise ValueError("line-search ratio must lie in (0, 1)")
        if min(self.max_outer, self.max_inner) < 1:
            raise ValueError("iteration caps must be positive")
        if self.reg_init < 0:
            raise ValueError("reg_init must be nonnegative")


@dataclass
class ALState:
    """Multipliers ``lam (K-1, m)`` and the scalar penalty weight."""

    lam: np.ndarray
    penalty: float

    @classmethod
    def zeros(cls, n_knots, m, penalty):
        return cls(np.zeros((n_knots, m)), float(penalty))

    def penalty_diag(self, con: ConstraintEval):
        """Active-set diagonal: penalize equalities always, inequalities if violated or lam > 0."""
        active = con.is_eq | (con.c > 0.0) | (self.lam > 0.0)
        return np.where(active & con.enabled, self.penalty, 0.0)

    def shifted(self):
        lam = np.concatenate([self.lam[1:], self.lam[-1:]], axis=0)
        return ALState(lam, self.penalty)


@dataclass
class ConvergenceReport:
    status: str = "unsolved"
    converged: bool = False
    outer_iterations: int = 0
    inner_iterations: int = 0
    cost: float = float("nan")
    al_cost: float = float("nan")
    max_violation: float = float("nan")
    max_grad: float = float("nan")
    solve_time: float = 0.0
    regularization: float = 0.0

    def to_dict(self):
        return asdict(self)

    def log_line(self):
        return (
            f"status={self.status} outer={self.outer_iterations} inner={self.inner_iterations} "
            f"cost={self.cost:.6g} viol={self.max_violation:.3e} grad={self.max_grad:.3e} "
            f"time_ms={1e3 * self.solve_time:.2f}"
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class Solution:
    X: np.ndarray
    U: np.ndarray
    K: np.ndarray
    d: np.ndarray
    al: Optional[ALState]
    report: ConvergenceReport
    values: list = field(default_factory=list)


def max_violation(con: Optional[ConstraintEval]):
    if con is None:
        return 0.0
    v = np.where(con.is_eq, np.abs(con.c), np.maximum(con.c, 0.0))
    v = np.where(con.enabled, v, 0.0)
    return float(v.max()) if v.size else 0.0


def rollout(problem, x0, U):
    if hasattr(problem, "rollout"):
        return problem.rollout(x0, U)
    X = np.empty((problem.K, len(x0)))
    X[0] = x0
    for k in range(problem.K - 1):
        X[k + 1] = problem.step(k, X[k], U[k])
    return X


def al_objective(problem, X, U, al):
    J = float(problem.cost(X, U))
    con = problem.constraints(X, U)
    if con is None or al is None:
        return J, J, con
    imu = al.penalty_diag(con)
    c = np.where(con.enabled, con.c, 0.0)
    return J + float(np.sum(al.lam * c) + 0.5 * np.sum(imu * c * c)), J, con


def _add_constraint_terms(exp, con, al):
    lx, lu, lxx, luu, lux = (a.copy() if a is not None else None for a in exp)
    if con is None or al is None:
        return lx, lu, lxx, luu, lux
    n = len(lu)
    imu = al.penalty_diag(con)
    c = np.where(con.enabled, con.c, 0.0)
    lam = np.where(con.enabled, al.lam, 0.0)
    w = lam + imu * c
    cu = con.cu
    luu += np.einsum("kmi,km,kmj->kij", cu, imu, cu)
    lu += np.einsum("kmi,km->ki", cu, w)
    if con.cx is not None:
        cx = con.cx
        lxx[:n] += np.einsum("kmi,km,kmj->kij", cx, imu, cx)
        lux += np.einsum("kmi,km,kmj->kij", cu, imu, cx)
        lx[:n] += np.einsum("kmi,km->ki", cx, w)
    return lx, lu, lxx, luu, lux


def backward_pass(A, B, expansion, reg=0.0):
    """Riccati recursion on the (already constraint-augmented) expansion.

    Args:
        A, B: error-state Jacobians, ``(K-1, n, n)`` and ``(K-1, n, m)``.
        expansion: ``(lx (K, n), lu (K-1, m), lxx (K, n, n), luu (K-1, m, m),
            lux (K-1, m, n))``; the last knot of ``lx, lxx`` is terminal.
        reg: multiple of the identity added to ``Q_uu``.

    Returns:
        ``(K, d, (dV1, dV2), P, p, max|Q_u|)``.

    Raises:
        NonPositiveDefinite: if a regularized ``Q_uu`` has no Cholesky factor.
    """
    lx, lu, lxx, luu, lux = expansion
    N, n, m = B.shape
    Ks = np.empty((N, m, n))
    ds = np.empty((N, m))
    Ps = np.empty((N + 1, n, n))
    ps = np.empty((N + 1, n))
    P = lxx[N]
    p = lx[N]
    Ps[N], ps[N] = P, p
    eye_m = np.eye(m)
    dV1 = dV2 = 0.0
    gmax = 0.0
    for k in range(N - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        AtP = Ak.T @ P
        BtP = Bk.T @ P
        Qx = lx[k] + Ak.T @ p
        Qu = lu[k] + Bk.T @ p
        Qxx = lxx[k] + AtP @ Ak
        Quu = luu[k] + BtP @ Bk
        Qux = lux[k] + BtP @ Ak
        Quu_reg = Quu + reg * eye_m if reg > 0 else Quu
        try:
            np.linalg.cholesky(Quu_reg)
        except np.linalg.LinAlgError:
            raise NonPositiveDefinite(f"Q_uu not positive definite at knot {k} (reg={reg:g})") from None
        sol = np.linalg.solve(Quu_reg, np.concatenate([Qux, Qu[:, None]], axis=1))
        K = -sol[:, :n]
        d = -sol[:, n]
        KtQuu = K.T @ Quu
        P = Qxx + KtQuu @ K + K.T @ Qux + Qux.T @ K
        P = 0.5 * (P + P.T)
        p = Qx + KtQuu @ d + K.T @ Qu + Qux.T @ d
        Ks[k], ds[k], Ps[k], ps[k] = K, d, P, p
        dV1 += d @ Qu
        dV2 += 0.5 * d @ Quu @ d
        gmax = max(gmax, float(np.max(np.abs(Qu))))
    return Ks, ds, (dV1, dV2), Ps, ps, gmax


def forward_pass(problem, X, U, K, d, alpha, bound=1e6):
    """Closed-loop rollout ``u = U + alpha d + K state_error(x, X)``."""
    if hasattr(problem, "closed_loop"):
        return problem.closed_loop(X, U, K, d, alpha, bound)
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    for k in range(len(U)):
        dx = problem.state_error(Xn[k], X[k])
        Un[k] = U[k] + alpha * d[k] + K[k] @ dx
        Xn[k + 1] = problem.step(k, Xn[k], Un[k])
        if not np.all(np.abs(Xn[k + 1]) < bound):
            raise RolloutDiverged(f"state left the bound {bound:g} at knot {k + 1}")
    return Xn, Un


class ALiLQR:
    """Solver instance; owns its workspace and is not shared across threads."""

    def __init__(self, settings: Optional[SolverSettings] = None):
        self.settings = settings or SolverSettings()

    def _backward(self, A, B, exp, reg):
        if not self.settings.compiled:
            return backward_pass(A, B, exp, reg)
        args = [np.ascontiguousarray(a, dtype=float) for a in (A, B) + tuple(exp)]
        Ks, ds, dV1, dV2, gmax, fail = _kernels.riccati(*args, float(reg))
        if fail >= 0:
            raise NonPositiveDefinite(f"Q_uu not positive definite at knot {fail} (reg={reg:g})")
        return Ks, ds, (dV1, dV2), None, None, gmax

    def _backward_with_reg(self, A, B, exp, reg):
        s = self.settings
        while True:
            try:
                return self._backward(A, B, exp, reg), reg
            except NonPositiveDefinite:
                reg = max(reg * s.reg_scale, s.reg_min)
                if reg > s.reg_max:
                    raise

    def solve(self, problem, x0, U0, al: Optional[ALState] = None, X0=None):
        """Solve from initial state ``x0`` and control guess ``U0``.

        The initial trajectory is the open-loop rollout of ``U0`` unless a
        consistent ``X0`` is passed.  Returns a :class:`Solution`; if the
        iteration caps are hit the best iterate is returned with
        ``report.status == "max_iterations"``.
        """
        s = self.settings
        t_start = time.perf_counter()
        U = np.array(U0, dtype=float)
        X = rollout(problem, np.asarray(x0, dtype=float), U) if X0 is None else np.array(X0, dtype=float)
        con = problem.constraints(X, U)
        if con is not None and al is None:
            al = ALState.zeros(len(U), con.c.shape[-1], s.penalty_init)
        if al is not None and con is not None:
            al = ALState(np.where(con.enabled, al.lam, 0.0), al.penalty)
        report = ConvergenceReport()
        reg = s.reg_init
        Ks = np.zeros((len(U), problem.nu, problem.ndx))
        ds = np.zeros((len(U), problem.nu))
        viol = max_violation(con)
        J_al, J, con = al_objective(problem, X, U, al)
        for outer in range(s.max_outer):
            report.outer_iterations = outer + 1
            inner_done = False
            for _ in range(s.max_inner):
                report.inner_iterations += 1
                A, B = problem.linearize(X, U)
                exp = _add_constraint_terms(problem.cost_expansion(X, U), con, al)
                (Ks, ds, (dV1, dV2), _, _, gmax), reg = self._backward_with_reg(A, B, exp, reg)
                report.max_grad = gmax
                if gmax < s.grad_tol or -(dV1 + dV2) < s.cost_tol:
                    inner_done = True
                    break
                alpha = 1.0
                accepted = False
                while alpha >= s.ls_min_step:
                    try:
                        Xn, Un = forward_pass(problem, X, U, Ks, ds, alpha, s.state_bound)
                        Jn_al, Jn, con_n = al_objective(problem, Xn, Un, al)
                    except (RolloutDiverged, NearSingularChart, KinematicSingularity, FloatingPointError):
                        Jn_al = np.inf
                    expected = -(alpha * dV1 + alpha * alpha * dV2)
                    if np.isfinite(Jn_al) and Jn_al <= J_al and (J_al - Jn_al) > s.ls_accept * expected:
                        accepted = True
                        break
                    alpha *= s.ls_ratio
                if not accepted:
                    reg = max(reg * s.reg_scale, s.reg_min)
                    if reg > s.reg_max:
                        break
                    continue
                dJ = J_al - Jn_al
                X, U, J_al, J, con = Xn, Un, Jn_al, Jn, con_n
                reg = reg / s.reg_scale if reg > s.reg_min else s.reg_init
                if dJ < s.cost_tol:
                    inner_done = True
                    break
            viol = max_violation(con)
            if con is None or al is None:
                report.converged = inner_done
                break
            if viol < s.constraint_tol and inner_done:
                report.converged = True
                break
            c = np.where(con.enabled, con.c, 0.0)
            lam = al.lam + al.penalty * c
            lam = np.where(con.is_eq, lam, np.maximum(lam, 0.0))
            al = ALState(np.where(con.enabled, lam, 0.0), min(al.penalty * s.penalty_scale, s.penalty_max))
            J_al, J, con = al_objective(problem, X, U, al)
        report.status = "converged" if report.converged else "max_iterations"
        report.cost = J
        report.al_cost = J_al
        report.max_violation = viol
        report.regularization = reg
        report.solve_time = time.perf_counter() - t_start
        return Solution(X, U, Ks, ds, al, report)


class LinearQuadraticProblem:
    """Euclidean linear dynamics with a quadratic tracking cost.

    ``x+ = A x + B u + c``; cost ``1/2 |x - x_ref|_Q^2 + 1/2 |u - u_ref|_R^2``
    per stage and ``1/2 |x_K - x_ref_K|_Qf^2`` at the end.  Optional box
    bounds on ``u`` become AL inequality constraints.
    """

    def __init__(self, A, B, Q, R, Qf, K, x_ref=None, u_ref=None, c=None, u_min=None, u_max=None):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.Q, self.R, self.Qf = (np.asarray(M, dtype=float) for M in (Q, R, Qf))
        self.K = K
        self.ndx = self.A.shape[0]
        self.nu = self.B.shape[1]
        self.c = np.zeros(self.ndx) if c is None else np.asarray(c, dtype=float)
        self.x_ref = np.zeros((K, self.ndx)) if x_ref is None else np.asarray(x_ref, dtype=float)
        self.u_ref = np.zeros((K - 1, self.nu)) if u_ref is None else np.asarray(u_ref, dtype=float)
        self.u_min = u_min
        self.u_max = u_max

    def step(self, k, x, u):
        return self.A @ x + self.B @ u + self.c

    def state_error(self, x, x_nom):
        return x - x_nom

    def linearize(self, X, U):
        n = len(U)
        return np.broadcast_to(self.A, (n,) + self.A.shape), np.broadcast_to(self.B, (n,) + self.B.shape)

    def cost(self, X, U):
        dx = X - self.x_ref
        du = U - self.u_ref
        stage = 0.5 * np.einsum("ki,ij,kj->", dx[:-1], self.Q, dx[:-1])
        stage += 0.5 * np.einsum("ki,ij,kj->", du, self.R, du)
        return float(stage + 0.5 * dx[-1] @ self.Qf @ dx[-1])

    def cost_expansion(self, X, U):
        dx = X - self.x_ref
        lx = dx @ self.Q.T
        lx[-1] = self.Qf @ dx[-1]
        lxx = np.broadcast_to(self.Q, (self.K,) + self.Q.shape).copy()
        lxx[-1] = self.Qf
        lu = (U - self.u_ref) @ self.R.T
        luu = np.broadcast_to(self.R, (self.K - 1,) + self.R.shape).copy()
        lux = np.zeros((self.K - 1, self.nu, self.ndx))
        return lx, lu, lxx, luu, lux

    def constraints(self, X, U):
        if self.u_min is None and self.u_max is None:
            return None
        n, m = U.shape
        eye = np.eye(m)
        rows_c, rows_j = [], []
        if self.u_max is not None:
            rows_c.append(U - self.u_max)
            rows_j.append(eye)
        if self.u_min is not None:
            rows_c.append(self.u_min - U)
            rows_j.append(-eye)
        c = np.concatenate(rows_c, axis=1)
        cu = np.broadcast_to(np.concatenate(rows_j, axis=0), (n, c.shape[1], m)).copy()
        mask = np.ones_like(c, dtype=bool)
        return ConstraintEval(c, None, cu, ~mask, mask)
