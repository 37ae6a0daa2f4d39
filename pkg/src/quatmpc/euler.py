"""ZYX Euler-angle SRB model and the baseline MPC built on it.

State layout (12): ``[r, (roll, pitch, yaw), v, omega]`` with ``omega`` in
the Body frame and ``R = Rz(yaw) Ry(pitch) Rx(roll)``.
"""

from __future__ import annotations

import numpy as np

from . import _kernels, costs, quat
from .dynamics import REACTION_WHEEL
from .exceptions import KinematicSingularity, RolloutDiverged
from .mpc import QuaternionMpc

NX = 12
COS_FLOOR = 1e-6
FD_STEP = 1e-6


def wrap(a):
    """Wrap angles to ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def rotmat(angles):
    """``Rz(yaw) Ry(pitch) Rx(roll)`` for ``angles = (..., [roll, pitch, yaw])``."""
    a = np.asarray(angles, dtype=float)
    cr, sr = np.cos(a[..., 0]), np.sin(a[..., 0])
    cp, sp = np.cos(a[..., 1]), np.sin(a[..., 1])
    cy, sy = np.cos(a[..., 2]), np.sin(a[..., 2])
    R = np.empty(a.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def from_quat(q):
    """ZYX angles ``[roll, pitch, yaw]`` of a unit quaternion (principal branch)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    roll = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2.0 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return np.stack([roll, pitch, yaw], axis=-1)


def to_quat(angles):
    a = np.asarray(angles, dtype=float)
    half = 0.5 * a
    cr, sr = np.cos(half[..., 0]), np.sin(half[..., 0])
    cp, sp = np.cos(half[..., 1]), np.sin(half[..., 1])
    cy, sy = np.cos(half[..., 2]), np.sin(half[..., 2])
    return np.stack(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ],
        axis=-1,
    )


def rate_map(angles):
    """``W`` with ``omega_body = W(angles) d(angles)/dt``."""
    a = np.asarray(angles, dtype=float)
    cr, sr = np.cos(a[..., 0]), np.sin(a[..., 0])
    cp, sp = np.cos(a[..., 1]), np.sin(a[..., 1])
    W = np.zeros(a.shape[:-1] + (3, 3))
    W[..., 0, 0] = 1.0
    W[..., 0, 2] = -sp
    W[..., 1, 1] = cr
    W[..., 1, 2] = sr * cp
    W[..., 2, 1] = -sr
    W[..., 2, 2] = cr * cp
    return W


def rate_map_inv(angles, floor=COS_FLOOR):
    """Inverse of :func:`rate_map`; raises :class:`KinematicSingularity` at gimbal lock."""
    a = np.asarray(angles, dtype=float)
    cp = np.cos(a[..., 1])
    if np.any(np.abs(cp) < floor):
        raise KinematicSingularity(f"|cos(pitch)| below {floor:g}")
    cr, sr = np.cos(a[..., 0]), np.sin(a[..., 0])
    tp = np.tan(a[..., 1])
    Wi = np.zeros(a.shape[:-1] + (3, 3))
    Wi[..., 0, 0] = 1.0
    Wi[..., 0, 1] = sr * tp
    Wi[..., 0, 2] = cr * tp
    Wi[..., 1, 1] = cr
    Wi[..., 1, 2] = -sr
    Wi[..., 2, 1] = sr / cp
    Wi[..., 2, 2] = cr / cp
    return Wi


def from_srb(x):
    """13-dim quaternion state to the 12-dim Euler state."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x[..., 0:3], from_quat(x[..., 3:7]), x[..., 7:13]], axis=-1)


def to_srb(xe):
    xe = np.asarray(xe, dtype=float)
    return np.concatenate([xe[..., 0:3], to_quat(xe[..., 3:6]), xe[..., 6:12]], axis=-1)


def unwrap_near(angles, anchor):
    """Shift each angle by multiples of 2 pi to land closest to ``anchor``."""
    return anchor + wrap(np.asarray(angles) - anchor)


def euler_dynamics(model, x, u, feet=None):
    """Time derivative of the Euler state; batch-capable over leading axes."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    ang = x[..., 3:6]
    w = x[..., 9:12]
    R = rotmat(ang)
    if model.variant == REACTION_WHEEL:
        acc = np.broadcast_to(-model.gravity, x.shape[:-1] + (3,))
        tau = np.concatenate([u[..., :2], np.zeros(u.shape[:-1] + (1,))], axis=-1)
    else:
        F = u.reshape(u.shape[:-1] + (model.n_contacts, 3))
        acc = F.sum(-2) / model.mass - model.gravity
        arms = np.asarray(feet, dtype=float) - x[..., None, 0:3]
        tau_w = quat.cross(arms, F).sum(-2)
        tau = np.einsum("...ji,...j->...i", R, tau_w)
    Iw = w @ model.inertia.T
    wdot = (tau - quat.cross(w, Iw)) @ model.inertia_inv.T
    adot = np.einsum("...ij,...j->...i", rate_map_inv(ang), w)
    return np.concatenate([x[..., 6:9], adot, acc, wdot], axis=-1)


def discrete_dynamics(model, x, u, feet=None, dt=0.01):
    """Explicit midpoint step of :func:`euler_dynamics`."""
    x = np.asarray(x, dtype=float)
    xm = x + 0.5 * dt * euler_dynamics(model, x, u, feet)
    return x + dt * euler_dynamics(model, xm, u, feet)


def jacobians(model, X, U, feet=None, dt=0.01, eps=FD_STEP):
    """Batched central-difference ``A_k, B_k`` of the midpoint map.

    Returns arrays of shape ``(N, 12, 12)`` and ``(N, 12, nu)``.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    N, nu = U.shape
    nz = NX + nu
    Z = np.concatenate([X[:N], U], axis=-1)
    P = np.concatenate([np.eye(nz), -np.eye(nz)]) * eps
    Zp = Z[:, None, :] + P[None]
    out = discrete_dynamics(model, Zp[..., :NX], Zp[..., NX:], feet, dt)
    J = (out[:, :nz] - out[:, nz:]) / (2.0 * eps)
    J = np.swapaxes(J, 1, 2)
    return J[:, :, :NX], J[:, :, NX:]


def angle_weights(weights):
    """Angle-space weight matching the quaternion cost to second order.

    ``w_q (1 - |q_ref . q|) ~ (w_q / 8) |angle|^2 = 1/2 (w_q / 4) |angle|^2``.
    """
    return np.full(3, weights.w_q / 4.0)


class EulerTrackingProblem:
    """Euler-state analogue of :class:`quatmpc.problem.SrbTrackingProblem`.

    Uses plain Euclidean iLQR expansions with wrapped angle errors.  The
    hot loops run in compiled kernels that mirror :func:`discrete_dynamics`
    and :func:`jacobians`.
    """

    ndx = NX

    def __init__(self, model, X_ref, U_ref, flags, feet, weights, cset, dt=0.01):
        self.model = model
        self.X_ref = np.asarray(X_ref, dtype=float)
        self.U_ref = np.asarray(U_ref, dtype=float)
        self.K = len(self.X_ref)
        self.nu = model.nu
        self.flags = None if flags is None else np.asarray(flags, dtype=bool)
        self.feet = feet
        self.weights = weights
        self.cset = cset
        self.dt = dt
        w = weights
        self.Qd = np.concatenate([w.w_r, angle_weights(w), w.w_v, w.w_w])
        m = model
        kfeet = feet if feet is not None and m.variant != REACTION_WHEEL else np.zeros((0, 3))
        self._params = (
            np.ascontiguousarray(kfeet, dtype=float), float(m.mass), m.inertia, m.inertia_inv,
            m.gravity, m.variant == REACTION_WHEEL, float(dt), COS_FLOOR,
        )

    def step(self, k, x, u):
        return discrete_dynamics(self.model, x, u, self.feet, self.dt)

    def rollout(self, x0, U):
        X, status = _kernels.euler_rollout(np.asarray(x0, dtype=float), np.ascontiguousarray(U, dtype=float), *self._params)
        if status:
            raise KinematicSingularity(f"|cos(pitch)| below {COS_FLOOR:g} in rollout")
        return X

    def closed_loop(self, X, U, K, d, alpha, bound):
        Xn, Un, status = _kernels.euler_closed_loop(X, U, K, d, float(alpha), *self._params, float(bound))
        if status == 1:
            raise RolloutDiverged(f"state left the bound {bound:g}")
        if status == 3:
            raise KinematicSingularity(f"|cos(pitch)| below {COS_FLOOR:g} in rollout")
        return Xn, Un

    def state_error(self, x, x_nom):
        d = np.asarray(x, dtype=float) - x_nom
        d[..., 3:6] = wrap(d[..., 3:6])
        return d

    def linearize(self, X, U):
        X = np.ascontiguousarray(X, dtype=float)
        U = np.ascontiguousarray(U, dtype=float)
        A, B, status = _kernels.euler_jacobians(X, U, *self._params, FD_STEP)
        if status:
            raise KinematicSingularity(f"|cos(pitch)| below {COS_FLOOR:g} in linearization")
        return A, B

    def cost(self, X, U):
        dx = self.state_error(X, self.X_ref)
        du = U - self.U_ref
        ru = self.weights.control_diag(self.nu)
        stage = 0.5 * np.sum(self.Qd * dx[:-1] ** 2) + 0.5 * np.sum(ru * du * du)
        return float(stage + 0.5 * self.weights.terminal * np.sum(self.Qd * dx[-1] ** 2))

    def cost_expansion(self, X, U):
        dx = self.state_error(X, self.X_ref)
        scale = np.ones(self.K)
        scale[-1] = self.weights.terminal
        lx = scale[:, None] * self.Qd * dx
        lxx = np.zeros((self.K, NX, NX))
        lxx[:, np.arange(NX), np.arange(NX)] = scale[:, None] * self.Qd
        ru = self.weights.control_diag(self.nu)
        lu = ru * (U - self.U_ref)
        luu = np.zeros((len(U), self.nu, self.nu))
        luu[:, np.arange(self.nu), np.arange(self.nu)] = ru
        lux = np.zeros((len(U), self.nu, NX))
        return lx, lu, lxx, luu, lux

    def constraints(self, X, U):
        if self.cset is None:
            return None
        return costs.control_constraints(self.model, U, self.flags, self.cset)


def reference_to_euler(X_ref, near):
    """Convert quaternion references and unwrap them along the horizon.

    The first knot is shifted to the branch closest to ``near`` (the
    current Euler angles); later knots follow continuously.
    """
    E = from_srb(X_ref)
    ang = E[:, 3:6]
    ang[0] = unwrap_near(ang[0], near)
    for k in range(1, len(ang)):
        ang[k] = unwrap_near(ang[k], ang[k - 1])
    E[:, 3:6] = ang
    return E


class EulerMpc(QuaternionMpc):
    """Same runtime as :class:`QuaternionMpc` with the ZYX Euler chart inside the solver."""

    def make_problem(self, X_ref, U_ref, flags, feet):
        c = self.config
        return EulerTrackingProblem(self.model, X_ref, U_ref, flags, feet, c.weights, c.constraints, c.dt)

    def solve_horizon(self, x_now, X_ref, U_ref, flags, feet, U_init, al):
        xe = from_srb(x_now)
        Xe_ref = reference_to_euler(X_ref, xe[3:6])
        problem = self.make_problem(Xe_ref, U_ref, flags, feet)
        return self.solver.solve(problem, xe, U_init, al=al)
