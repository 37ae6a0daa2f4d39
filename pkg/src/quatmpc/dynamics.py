"""Single-rigid-body dynamics, midpoint discretization and error-state linearization.

State layout (13): ``[r(3) q(4) v(3) omega(3)]``.  ``r``, ``v`` and foot
forces are World-frame quantities; ``q`` maps Body to World; ``omega``,
the inertia and the applied torque are Body-frame quantities.

Error-state layout (12): ``[dr, phi, dv, domega]`` with ``phi`` the Cayley
parameters of ``conj(q_ref) (x) q``.

All array functions accept a single state ``(13,)`` or a stack ``(N, 13)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import quat
from .exceptions import ConfigError, DimensionMismatch, ReferenceInconsistent

NX = 13
NDX = 12

FOOT_FORCE = "foot_force"
REACTION_WHEEL = "reaction_wheel"

ROBOT_FORMAT = "quatmpc-robot/1"

_R, _Q, _V, _W = slice(0, 3), slice(3, 7), slice(7, 10), slice(10, 13)


@dataclass(frozen=True)
class SrbState:
    r: np.ndarray
    q: np.ndarray
    v: np.ndarray
    omega: np.ndarray

    def pack(self):
        return np.concatenate([self.r, self.q, self.v, self.omega]).astype(float)

    @classmethod
    def unpack(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[_R].copy(), x[_Q].copy(), x[_V].copy(), x[_W].copy())


def make_state(r=(0.0, 0.0, 0.0), q=quat.IDENTITY, v=(0.0, 0.0, 0.0), omega=(0.0, 0.0, 0.0)):
    return np.concatenate([r, quat.normalize(q), v, omega]).astype(float)


@dataclass
class RobotModel:
    """Rigid-body parameters of one robot.

    ``contact_points`` are nominal foot positions in the Body frame; for the
    foot-force variant they also fix ``n_c``.  For the reaction-wheel variant
    they only serve touchdown checks.
    """

    name: str
    mass: float
    inertia: np.ndarray
    contact_points: np.ndarray
    variant: str = FOOT_FORCE
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 9.81]))
    nominal_height: float = 0.3
    force_max: float | None = None
    torque_limit: float = 4.0
    body_half_extents: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.1, 0.05]))
    reach: float = 0.15

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        if self.inertia.shape == (3,):
            self.inertia = np.diag(self.inertia)
        self.contact_points = np.atleast_2d(np.asarray(self.contact_points, dtype=float))
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.body_half_extents = np.asarray(self.body_half_extents, dtype=float)
        if self.variant not in (FOOT_FORCE, REACTION_WHEEL):
            raise ConfigError("variant", f"unknown variant {self.variant!r}")
        if not self.mass > 0:
            raise ConfigError("mass", "must be positive")
        if self.inertia.shape != (3, 3) or not np.allclose(self.inertia, self.inertia.T):
            raise ConfigError("inertia", "must be a symmetric 3x3 matrix or a diagonal 3-vector")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ConfigError("inertia", "must be positive definite")
        if self.contact_points.shape[-1] != 3:
            raise ConfigError("contact_points", "entries must be 3-vectors")
        if self.variant == FOOT_FORCE and len(self.contact_points) < 1:
            raise ConfigError("contact_points", "foot-force model needs at least one contact")
        if self.force_max is None:
            self.force_max = 2.0 * self.mass * float(np.linalg.norm(self.gravity))
        self.inertia_inv = np.linalg.inv(self.inertia)

    @property
    def n_contacts(self):
        return len(self.contact_points)

    @property
    def nu(self):
        return 3 * self.n_contacts if self.variant == FOOT_FORCE else 2

    @property
    def weight(self):
        return self.mass * float(np.linalg.norm(self.gravity))

    @property
    def control_limits(self):
        """Per-channel box ``(nu, 2)`` used when clamping an applied control."""
        if self.variant == REACTION_WHEEL:
            return np.tile([-self.torque_limit, self.torque_limit], (2, 1))
        per_foot = [[-self.force_max, self.force_max]] * 2 + [[0.0, self.force_max]]
        return np.array(per_foot * self.n_contacts, dtype=float)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("<root>", "robot config must be a mapping")
        fmt = d.get("format", ROBOT_FORMAT)
        if fmt != ROBOT_FORMAT:
            raise ConfigError("format", f"expected {ROBOT_FORMAT!r}, got {fmt!r}")
        known = {
            "name", "mass", "inertia", "contact_points", "variant", "gravity",
            "nominal_height", "force_max", "torque_limit", "body_half_extents", "reach",
        }
        for key in d:
            if key != "format" and key not in known:
                raise ConfigError(key, "unknown field")
        for key in ("mass", "inertia", "contact_points"):
            if key not in d:
                raise ConfigError(key, "missing required field")
        kwargs = {k: v for k, v in d.items() if k in known}
        kwargs.setdefault("name", "robot")
        for key in ("mass", "nominal_height", "force_max", "torque_limit", "reach"):
            if kwargs.get(key) is not None and not isinstance(kwargs[key], (int, float)):
                raise ConfigError(key, f"expected a number, got {kwargs[key]!r}")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("<root>", str(exc)) from exc

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def _check_controls(model, u, feet):
    if u.shape[-1] != model.nu:
        raise DimensionMismatch(f"control has {u.shape[-1]} entries, model expects {model.nu}")
    if model.variant == FOOT_FORCE:
        if feet is None or np.shape(feet)[-2:] != (model.n_contacts, 3):
            raise DimensionMismatch(
                f"feet must have shape ({model.n_contacts}, 3), got {None if feet is None else np.shape(feet)}"
            )


def _body_from_world_free(q, w):
    """``vec(conj(q) (x) w^ (x) q)`` for a not-necessarily-unit ``q``."""
    s, u = q[..., :1], q[..., 1:]
    return (s * s - np.sum(u * u, -1, keepdims=True)) * w + 2.0 * np.sum(u * w, -1, keepdims=True) * u - 2.0 * s * quat.cross(u, w)


def _body_from_world_matrix(q):
    s, u = q[..., 0], q[..., 1:]
    eye = np.eye(3)
    return (
        (s * s - np.sum(u * u, -1))[..., None, None] * eye
        + 2.0 * u[..., :, None] * u[..., None, :]
        - 2.0 * s[..., None, None] * quat.skew(u)
    )


def _body_torque(model, x, u, feet):
    if model.variant == REACTION_WHEEL:
        return np.concatenate([u[..., :2], np.zeros(u.shape[:-1] + (1,))], axis=-1)
    F = u.reshape(u.shape[:-1] + (model.n_contacts, 3))
    arms = feet - x[..., None, _R]
    tau_world = np.sum(quat.cross(arms, F), axis=-2)
    return _body_from_world_free(x[..., _Q], tau_world)


def continuous_dynamics(model, x, u, feet=None):
    """Time derivative of the 13-dim state.

    Args:
        model: :class:`RobotModel`.
        x: state ``(..., 13)``.
        u: control ``(..., nu)``: stacked World-frame foot forces, or
            ``[tau_roll, tau_pitch]`` for the reaction-wheel variant.
        feet: World-frame contact positions ``(n_c, 3)``; ignored for the
            reaction-wheel variant.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_controls(model, u, feet)
    q, v, w = x[..., _Q], x[..., _V], x[..., _W]
    qdot = 0.5 * quat.quat_mul(q, quat.hat_vec(w))
    if model.variant == FOOT_FORCE:
        fsum = np.sum(u.reshape(u.shape[:-1] + (model.n_contacts, 3)), axis=-2)
        vdot = fsum / model.mass - model.gravity
    else:
        vdot = np.broadcast_to(-model.gravity, v.shape)
    M = _body_torque(model, x, u, feet)
    Iw = w @ model.inertia.T
    wdot = (M - quat.cross(w, Iw)) @ model.inertia_inv.T
    return np.concatenate([v, qdot, vdot, wdot], axis=-1)


def _cont_jacobians(model, x, u, feet):
    """Raw Jacobians of :func:`continuous_dynamics` with ``q`` a free 4-vector."""
    batch = x.shape[:-1]
    r, q, w = x[..., _R], x[..., _Q], x[..., _W]
    Iinv = model.inertia_inv
    fx = np.zeros(batch + (NX, NX))
    fu = np.zeros(batch + (NX, model.nu))

    fx[..., 0:3, 7:10] = np.eye(3)
    fx[..., 3:7, 3:7] = 0.5 * quat.rmat(quat.hat_vec(w))
    fx[..., 3:7, 10:13] = 0.5 * quat.attitude_jacobian(q)
    Iw = w @ model.inertia.T
    fx[..., 10:13, 10:13] = Iinv @ (quat.skew(Iw) - quat.skew(w) @ model.inertia)

    if model.variant == FOOT_FORCE:
        nc = model.n_contacts
        F = u.reshape(batch + (nc, 3))
        arms = feet - r[..., None, :]
        tau_world = np.sum(quat.cross(arms, F), axis=-2)
        Rt = _body_from_world_matrix(q)
        fx[..., 10:13, 0:3] = Iinv @ Rt @ quat.skew(np.sum(F, axis=-2))
        dMdu = Rt[..., None, :, :] @ quat.skew(arms)  # (..., nc, 3, 3)
        for i in range(nc):
            fu[..., 7:10, 3 * i:3 * i + 3] = np.eye(3) / model.mass
            fu[..., 10:13, 3 * i:3 * i + 3] = Iinv @ dMdu[..., i, :, :]
    else:
        tau_world = None
        fu[..., 10:13, :] = Iinv[:, :2]

    if tau_world is not None:
        s, uq = q[..., :1], q[..., 1:]
        wv = tau_world
        dMds = 2.0 * s * wv - 2.0 * quat.cross(uq, wv)
        dMdq_v = (
            -2.0 * wv[..., :, None] * uq[..., None, :]
            + 2.0 * np.sum(uq * wv, -1)[..., None, None] * np.eye(3)
            + 2.0 * uq[..., :, None] * wv[..., None, :]
            + 2.0 * s[..., None] * quat.skew(wv)
        )
        dMdq = np.concatenate([dMds[..., :, None], dMdq_v], axis=-1)
        fx[..., 10:13, 3:7] = Iinv @ dMdq
    return fx, fu


def discrete_dynamics(model, x, u, feet=None, dt=0.01):
    """Explicit midpoint step followed by quaternion renormalization."""
    x = np.asarray(x, dtype=float)
    xm = x + 0.5 * dt * continuous_dynamics(model, x, u, feet)
    xn = x + dt * continuous_dynamics(model, xm, u, feet)
    xn[..., _Q] = quat.normalize(xn[..., _Q])
    return xn


def raw_jacobians(model, x, u, feet=None, dt=0.01):
    """Jacobians of :func:`discrete_dynamics` treating ``q`` as a free 4-vector.

    Returns ``(x_next, dfdx (..., 13, 13), dfdu (..., 13, nu))``.  The chain
    rule runs through the midpoint stage and the final renormalization.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f0 = continuous_dynamics(model, x, u, feet)
    xm = x + 0.5 * dt * f0
    f1 = continuous_dynamics(model, xm, u, feet)
    x_raw = x + dt * f1

    fx0, fu0 = _cont_jacobians(model, x, u, feet)
    fx1, fu1 = _cont_jacobians(model, xm, u, feet)
    eye = np.eye(NX)
    A = eye + dt * fx1 @ (eye + 0.5 * dt * fx0)
    B = dt * (0.5 * dt * fx1 @ fu0 + fu1)

    qr = x_raw[..., _Q]
    n = np.linalg.norm(qr, axis=-1)
    qn = qr / n[..., None]
    Nq = (np.eye(4) - qn[..., :, None] * qn[..., None, :]) / n[..., None, None]
    A[..., 3:7, :] = Nq @ A[..., 3:7, :]
    B[..., 3:7, :] = Nq @ B[..., 3:7, :]
    x_next = x_raw.copy()
    x_next[..., _Q] = qn
    return x_next, A, B


def error_state_jacobian(x):
    """E(x): block-diagonal ``(I3, G(q), I3, I3)``, shape ``(..., 13, 12)``."""
    x = np.asarray(x, dtype=float)
    E = np.zeros(x.shape[:-1] + (NX, NDX))
    E[..., 0:3, 0:3] = np.eye(3)
    E[..., 3:7, 3:6] = quat.attitude_jacobian(x[..., _Q])
    E[..., 7:10, 6:9] = np.eye(3)
    E[..., 10:13, 9:12] = np.eye(3)
    return E


@dataclass
class LinearizedStep:
    A: np.ndarray
    B: np.ndarray


def linearize(model, x, u, x_next, feet=None, dt=0.01, tol=1e-8):
    """Error-state Jacobians ``A_k, B_k`` about a consistent reference step.

    Raises :class:`ReferenceInconsistent` if ``x_next`` is not the midpoint
    successor of ``(x, u)`` to within ``tol`` (pass ``tol=None`` to skip).
    """
    x_pred, A_raw, B_raw = raw_jacobians(model, x, u, feet, dt)
    x_next = np.asarray(x_next, dtype=float)
    if tol is not None:
        gap = np.max(np.abs(state_error(x_pred, x_next)))
        if gap > tol:
            raise ReferenceInconsistent(f"reference step mismatch {gap:.3e} > {tol:g}")
    Et_next = np.swapaxes(error_state_jacobian(x_next), -1, -2)
    A = Et_next @ A_raw @ error_state_jacobian(x)
    B = Et_next @ B_raw
    return LinearizedStep(A, B)


def linearize_trajectory(model, X, U, feet=None, dt=0.01):
    """Batched ``A_k, B_k`` along a rollout ``X (K, 13)``, ``U (K-1, nu)``."""
    X = np.asarray(X, dtype=float)
    _, A_raw, B_raw = raw_jacobians(model, X[:-1], U, feet, dt)
    Et_next = np.swapaxes(error_state_jacobian(X[1:]), -1, -2)
    return Et_next @ A_raw @ error_state_jacobian(X[:-1]), Et_next @ B_raw


def state_error(x, x_ref):
    """12-dim error ``[r - r_ref, cayley_inv(conj(q_ref) (x) q), v - v_ref, w - w_ref]``."""
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    dq = quat.quat_mul(quat.conj(x_ref[..., _Q]), x[..., _Q])
    phi = quat.cayley_inv(dq)
    return np.concatenate(
        [x[..., _R] - x_ref[..., _R], phi, x[..., _V] - x_ref[..., _V], x[..., _W] - x_ref[..., _W]],
        axis=-1,
    )


def retract(x, dx):
    """Apply a 12-dim error to a state: inverse of :func:`state_error`."""
    x = np.asarray(x, dtype=float)
    dx = np.asarray(dx, dtype=float)
    q = quat.normalize(quat.quat_mul(x[..., _Q], quat.cayley(dx[..., 3:6])))
    return np.concatenate(
        [x[..., _R] + dx[..., 0:3], q, x[..., _V] + dx[..., 6:9], x[..., _W] + dx[..., 9:12]],
        axis=-1,
    )


def angular_momentum_world(model, x):
    """World-frame angular momentum about the CoM, ``R(q) I omega``."""
    x = np.asarray(x, dtype=float)
    return quat.rotate(x[..., _Q], x[..., _W] @ model.inertia.T)


def builtin_robot(name):
    """Load one of the packaged robot definitions by name."""
    path = Path(__file__).parent / "data" / "robots" / f"{name}.yaml"
    if not path.exists():
        raise ConfigError("robot", f"no packaged robot named {name!r}")
    return RobotModel.from_file(path)
