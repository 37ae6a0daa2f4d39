"""Tracking costs with the quaternion geodesic term, and contact constraints.

Derivatives are taken with respect to the 12-dim error state
``[dr, phi, dv, domega]`` at the evaluation point (see
:mod:`quatmpc.dynamics`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import quat
from .dynamics import FOOT_FORCE

log = logging.getLogger(__name__)

SIGN_EPS = 1e-10


@dataclass
class CostWeights:
    """Diagonal tracking weights; all quadratic terms carry a 1/2."""

    w_r: np.ndarray = field(default_factory=lambda: np.array([50.0, 50.0, 50.0]))
    w_q: float = 30.0
    w_v: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 5.0]))
    w_w: np.ndarray = field(default_factory=lambda: np.array([0.4, 0.4, 0.4]))
    r_u: float | np.ndarray = 1e-4
    terminal: float = 1.0

    def __post_init__(self):
        self.w_r = np.broadcast_to(np.asarray(self.w_r, dtype=float), (3,)).copy()
        self.w_v = np.broadcast_to(np.asarray(self.w_v, dtype=float), (3,)).copy()
        self.w_w = np.broadcast_to(np.asarray(self.w_w, dtype=float), (3,)).copy()
        self.w_q = float(self.w_q)
        self.r_u = np.asarray(self.r_u, dtype=float)
        if min(self.w_r.min(), self.w_v.min(), self.w_w.min(), self.w_q, self.terminal) < 0:
            raise ValueError("cost weights must be nonnegative")
        if np.any(self.r_u <= 0):
            raise ValueError("control weight must be strictly positive")

    def control_diag(self, nu):
        return np.broadcast_to(self.r_u, (nu,)).astype(float)


def _sign(d):
    d = np.asarray(d, dtype=float)
    # diverged rollouts are rejected by the line search; only warn on valid ones
    if np.all(np.isfinite(d)) and np.any(np.abs(d) < SIGN_EPS):
        log.warning("quaternion cost evaluated on the 90 degree ridge; using sign +1")
    return np.where(d < 0.0, -1.0, 1.0)


def quat_cost(q, q_ref):
    """``1 - |q_ref . q|``: zero for the same rotation, one at 180 degrees."""
    d = np.sum(np.asarray(q) * np.asarray(q_ref), axis=-1)
    return 1.0 - np.abs(d)


def quat_cost_gradient(q, q_ref):
    """``-sign(q_ref . q) G(q)^T q_ref`` (3-vector)."""
    q = np.asarray(q, dtype=float)
    q_ref = np.asarray(q_ref, dtype=float)
    s = _sign(np.sum(q * q_ref, axis=-1))
    G = quat.attitude_jacobian(q)
    return -s[..., None] * np.einsum("...ij,...i->...j", G, q_ref)


def quat_cost_hessian(q, q_ref):
    """``|q_ref . q| I3``, positive semidefinite everywhere."""
    d = np.abs(np.sum(np.asarray(q) * np.asarray(q_ref), axis=-1))
    return d[..., None, None] * np.eye(3)


class CostExpansion(NamedTuple):
    l: np.ndarray
    lx: np.ndarray
    lu: Optional[np.ndarray]
    lxx: np.ndarray
    luu: Optional[np.ndarray]
    lux: Optional[np.ndarray]


def stage_cost(x, u, x_ref, u_ref, weights):
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    dr = x[..., 0:3] - x_ref[..., 0:3]
    dv = x[..., 7:10] - x_ref[..., 7:10]
    dw = x[..., 10:13] - x_ref[..., 10:13]
    val = 0.5 * (
        np.sum(weights.w_r * dr * dr, -1)
        + np.sum(weights.w_v * dv * dv, -1)
        + np.sum(weights.w_w * dw * dw, -1)
    ) + weights.w_q * quat_cost(x[..., 3:7], x_ref[..., 3:7])
    if u is not None:
        du = np.asarray(u, dtype=float) - np.asarray(u_ref, dtype=float)
        val = val + 0.5 * np.sum(weights.control_diag(du.shape[-1]) * du * du, -1)
    return val


def stage_expansion(x, u, x_ref, u_ref, weights, scale=1.0):
    """Cost value and error-state derivative blocks.

    Returns a :class:`CostExpansion`; ``lx`` is 12-dim with the attitude
    entries from the geodesic gradient, ``lxx`` carries ``w_q |q_ref.q| I3``
    in the attitude block.  With ``u=None`` the control blocks are ``None``
    (terminal cost).
    """
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    batch = x.shape[:-1]
    l = scale * stage_cost(x, u, x_ref, u_ref, weights)
    lx = np.empty(batch + (12,))
    lx[..., 0:3] = weights.w_r * (x[..., 0:3] - x_ref[..., 0:3])
    lx[..., 3:6] = weights.w_q * quat_cost_gradient(x[..., 3:7], x_ref[..., 3:7])
    lx[..., 6:9] = weights.w_v * (x[..., 7:10] - x_ref[..., 7:10])
    lx[..., 9:12] = weights.w_w * (x[..., 10:13] - x_ref[..., 10:13])
    lxx = np.zeros(batch + (12, 12))
    idx = np.arange(12)
    diag = np.concatenate([weights.w_r, np.zeros(3), weights.w_v, weights.w_w])
    lxx[..., idx, idx] = diag
    lxx[..., 3:6, 3:6] = weights.w_q * quat_cost_hessian(x[..., 3:7], x_ref[..., 3:7])
    if u is None:
        return CostExpansion(l, scale * lx, None, scale * lxx, None, None)
    u = np.asarray(u, dtype=float)
    nu = u.shape[-1]
    ru = weights.control_diag(nu)
    lu = ru * (u - np.asarray(u_ref, dtype=float))
    luu = np.zeros(batch + (nu, nu))
    luu[..., np.arange(nu), np.arange(nu)] = ru
    lux = np.zeros(batch + (nu, 12))
    return CostExpansion(l, scale * lx, scale * lu, scale * lxx, scale * luu, lux)


@dataclass
class ConstraintSet:
    """Contact-force limits.

    ``normals`` holds one World-frame contact normal per foot (ground
    contacts default to +z).  ``torque_limit`` bounds reaction-wheel torques.
    """

    mu: float = 0.6
    f_min: float = 0.0
    f_max: float = 200.0
    normals: Optional[np.ndarray] = None
    torque_limit: float = 4.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("friction coefficient must be positive")
        if self.f_min < 0 or not self.f_max > self.f_min:
            raise ValueError("need 0 <= f_min < f_max")
        if self.normals is not None:
            self.normals = quat.normalize(np.atleast_2d(np.asarray(self.normals, dtype=float)))

    def surface_frames(self, n_c):
        """Per-foot ``(t1, t2, n)`` rows, shape ``(n_c, 3, 3)``."""
        normals = self.normals if self.normals is not None else np.tile([0.0, 0.0, 1.0], (n_c, 1))
        if len(normals) != n_c:
            raise ValueError(f"expected {n_c} contact normals, got {len(normals)}")
        frames = np.empty((n_c, 3, 3))
        for i, n in enumerate(normals):
            seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            t1 = seed - np.dot(seed, n) * n
            t1 /= np.linalg.norm(t1)
            frames[i] = [t1, np.cross(n, t1), n]
        return frames

    @classmethod
    def for_model(cls, model, **overrides):
        kw = dict(f_max=model.force_max, torque_limit=model.torque_limit)
        kw.update(overrides)
        return cls(**kw)


class ConstraintEval(NamedTuple):
    """Constraint residuals ``c <= 0`` (inequality) / ``c == 0`` (equality).

    Rows with ``enabled == False`` are placeholders kept so that the layout
    is fixed across knots; their residual and Jacobian are zero.
    """

    c: np.ndarray
    cx: Optional[np.ndarray]
    cu: np.ndarray
    is_eq: np.ndarray
    enabled: np.ndarray


ROWS_PER_FOOT = 9


def friction_constraints(u, flags, cset):
    """Pyramid friction cone, normal-force bounds and swing-foot zero force.

    Layout per foot (9 rows, stable): ``t1 - mu n``, ``-t1 - mu n``,
    ``t2 - mu n``, ``-t2 - mu n``, ``f_min - n``, ``n - f_max`` (stance
    inequalities), then ``F_x, F_y, F_z`` (swing equalities).  ``t1, t2, n``
    are the force components in the contact surface frame.

    Args:
        u: stacked foot forces ``(..., 3 n_c)``.
        flags: stance flags ``(..., n_c)``.
    """
    u = np.asarray(u, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    n_c = flags.shape[-1]
    batch = u.shape[:-1]
    frames = cset.surface_frames(n_c)
    mu = cset.mu
    # rows of the inequality block as linear maps of the surface-frame force
    S = np.array(
        [
            [1.0, 0.0, -mu],
            [-1.0, 0.0, -mu],
            [0.0, 1.0, -mu],
            [0.0, -1.0, -mu],
            [0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0],
        ]
    )
    offs = np.array([0.0, 0.0, 0.0, 0.0, cset.f_min, -cset.f_max])
    m = ROWS_PER_FOOT * n_c
    c = np.zeros(batch + (m,))
    cu = np.zeros(batch + (m, 3 * n_c))
    is_eq = np.zeros(batch + (m,), dtype=bool)
    enabled = np.zeros(batch + (m,), dtype=bool)
    F = u.reshape(batch + (n_c, 3))
    for i in range(n_c):
        r0 = ROWS_PER_FOOT * i
        cols = slice(3 * i, 3 * i + 3)
        st = flags[..., i]
        Ji = S @ frames[i]
        ineq = F[..., i, :] @ Ji.T + offs
        c[..., r0:r0 + 6] = np.where(st[..., None], ineq, 0.0)
        cu[..., r0:r0 + 6, cols] = np.where(st[..., None, None], Ji, 0.0)
        enabled[..., r0:r0 + 6] = st[..., None]
        sw = ~st
        c[..., r0 + 6:r0 + 9] = np.where(sw[..., None], F[..., i, :], 0.0)
        cu[..., r0 + 6:r0 + 9, cols] = np.where(sw[..., None, None], np.eye(3), 0.0)
        is_eq[..., r0 + 6:r0 + 9] = True
        enabled[..., r0 + 6:r0 + 9] = sw[..., None]
    return ConstraintEval(c, None, cu, is_eq, enabled)


def torque_constraints(u, limit):
    """``|tau_i| <= limit`` as four inequality rows ``[t0-l, -t0-l, t1-l, -t1-l]``."""
    u = np.asarray(u, dtype=float)
    batch = u.shape[:-1]
    J = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    c = u @ J.T - limit
    cu = np.broadcast_to(J, batch + (4, 2)).copy()
    ones = np.ones(batch + (4,), dtype=bool)
    return ConstraintEval(c, None, cu, ~ones, ones)


def control_constraints(model, u, flags, cset):
    if model.variant == FOOT_FORCE:
        return friction_constraints(u, flags, cset)
    return torque_constraints(u, cset.torque_limit)


def project_force(F, normal, mu, f_min=0.0, f_max=np.inf):
    """Clamp one contact force into the friction pyramid of ``normal``."""
    n = np.asarray(normal, dtype=float)
    frames = ConstraintSet(mu=mu, normals=n[None]).surface_frames(1)[0]
    local = frames @ np.asarray(F, dtype=float)
    fn = float(np.clip(local[2], f_min, f_max))
    lim = mu * fn
    local = np.array([np.clip(local[0], -lim, lim), np.clip(local[1], -lim, lim), fn])
    return frames.T @ local


def landing_target(q0):
    """Closest yaw-only attitude to ``q0`` under ``1 - |q_ref . q0|``.

    Keeps the scalar and z components of ``q0`` and renormalizes; falls
    back to the identity when both vanish (any yaw is then optimal).
    """
    q0 = np.asarray(q0, dtype=float)
    n = np.hypot(q0[0], q0[3])
    if n < 1e-10:
        return quat.IDENTITY.copy()
    return np.array([q0[0] / n, 0.0, 0.0, q0[3] / n])
