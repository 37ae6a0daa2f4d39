"""Unit-quaternion algebra and differential calculus.

Quaternions are stored ``[w, x, y, z]`` (scalar first).  Every function
accepts a single quaternion of shape ``(4,)`` or a stack ``(..., 4)``; vector
arguments broadcast the same way.

Differential rotations are 3-vectors ``phi`` mapped to quaternions with the
Cayley map ``[1, phi] / sqrt(1 + |phi|^2)``.  Perturbations compose on the
right, ``q (x) cayley(phi)``, so ``phi`` lives in the body frame.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NearSingularChart

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

#: Embeds a 3-vector as a pure quaternion, ``H @ v == [0, v]``.
H = np.vstack([np.zeros((1, 3)), np.eye(3)])

#: Conjugation matrix, ``T @ q == conj(q)``.
T = np.diag([1.0, -1.0, -1.0, -1.0])

#: Smallest |q_s| accepted by :func:`cayley_inv`.
CHART_FLOOR = 1e-8

_RENORM_TOL = 1e-12


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == cross(a, b)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def cross(a, b):
    # np.cross is slow on tiny arrays
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def lmat(q):
    """Left-multiplication matrix, ``lmat(q1) @ q2 == q1 (x) q2``."""
    q = np.asarray(q, dtype=float)
    s = q[..., 0]
    x, y, z = q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([s, -x, -y, -z], axis=-1),
            np.stack([x, s, -z, y], axis=-1),
            np.stack([y, z, s, -x], axis=-1),
            np.stack([z, -y, x, s], axis=-1),
        ],
        axis=-2,
    )


def rmat(q):
    """Right-multiplication matrix, ``rmat(q2) @ q1 == q1 (x) q2``."""
    q = np.asarray(q, dtype=float)
    s = q[..., 0]
    x, y, z = q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([s, -x, -y, -z], axis=-1),
            np.stack([x, s, z, -y], axis=-1),
            np.stack([y, -z, s, x], axis=-1),
            np.stack([z, y, -x, s], axis=-1),
        ],
        axis=-2,
    )


def quat_mul(q1, q2):
    """Hamilton product ``q1 (x) q2``.  No normalization is applied."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    s1, v1 = q1[..., :1], q1[..., 1:]
    s2, v2 = q2[..., :1], q2[..., 1:]
    s = s1 * s2 - np.sum(v1 * v2, axis=-1, keepdims=True)
    v = s1 * v2 + s2 * v1 + cross(v1, v2)
    return np.concatenate([s, v], axis=-1)


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def renormalize(q):
    """Normalize only where the norm has drifted by more than 1e-12."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.all(np.abs(n - 1.0) <= _RENORM_TOL):
        return q
    return q / n


def compose(q1, q2):
    """Rotation composition ``q1 (x) q2`` for unit inputs, renormalized."""
    return renormalize(quat_mul(q1, q2))


def conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def hat_vec(v):
    """Pure quaternion ``[0, v]``."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def cayley(phi):
    """Cayley map from a 3-vector to a unit quaternion with positive scalar part."""
    phi = np.asarray(phi, dtype=float)
    n2 = np.sum(phi * phi, axis=-1, keepdims=True)
    return np.concatenate([np.ones_like(n2), phi], axis=-1) / np.sqrt(1.0 + n2)


def canonical(q):
    """Flip sign so that the scalar part is nonnegative."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., :1] < 0.0, -q, q)


def cayley_inv(q, floor=CHART_FLOOR):
    """Inverse Cayley map ``q_v / q_s`` after sign canonicalization.

    Raises :class:`NearSingularChart` if ``|q_s| < floor`` for any input.
    """
    q = canonical(q)
    s = q[..., :1]
    if np.any(s < floor):
        raise NearSingularChart(
            f"scalar part {float(np.min(s)):.3e} below chart floor {floor:g}"
        )
    return q[..., 1:] / s


def attitude_jacobian(q):
    """G(q) = L(q) H, shape ``(..., 4, 3)``."""
    q = np.asarray(q, dtype=float)
    s = q[..., 0]
    x, y, z = q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([-x, -y, -z], axis=-1),
            np.stack([s, -z, y], axis=-1),
            np.stack([z, s, -x], axis=-1),
            np.stack([-y, x, s], axis=-1),
        ],
        axis=-2,
    )


def quat_fn_jacobian(dfdq, q, fq):
    """3x3 Jacobian of a quaternion-valued map in Cayley coordinates.

    Args:
        dfdq: raw 4x4 Jacobian of ``f`` evaluated at ``q``.
        q: input quaternion.
        fq: ``f(q)``, assumed unit norm.
    """
    return np.swapaxes(attitude_jacobian(fq), -1, -2) @ dfdq @ attitude_jacobian(q)


def scalar_fn_gradient(dhdq, q):
    """Gradient of a scalar function of ``q`` with respect to ``phi``."""
    return np.asarray(dhdq) @ attitude_jacobian(q)


def scalar_fn_hessian(dhdq, d2hdq2, q):
    """Hessian of a scalar function of ``q`` with respect to ``phi``.

    ``G^T (d2h/dq2) G - I * (dh/dq . q)``; the second term is the curvature
    of the unit sphere seen through the Cayley chart.
    """
    q = np.asarray(q, dtype=float)
    G = attitude_jacobian(q)
    return G.T @ np.asarray(d2hdq2) @ G - np.eye(3) * float(np.dot(dhdq, q))


def to_rotmat(q):
    """Rotation matrix of a unit quaternion (Body -> World for an attitude)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def rotate(q, v):
    """Rotate ``v`` by ``q``: the vector part of ``q (x) [0, v] (x) conj(q)``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    s, u = q[..., :1], q[..., 1:]
    t = 2.0 * cross(u, v)
    return v + s * t + cross(u, t)


def rotate_inv(q, v):
    """Rotate ``v`` by ``conj(q)`` (World -> Body for an attitude)."""
    return rotate(conj(q), v)


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def rotation_increment(omega, dt):
    """Exact rotation by ``|omega| dt`` about ``omega`` built through the Cayley chart.

    ``cayley(tan(theta/2) * axis)`` is the rotation by ``theta`` about
    ``axis``, so no exponential map is needed.
    """
    omega = np.asarray(omega, dtype=float)
    w = np.linalg.norm(omega)
    theta = w * dt
    if theta < 1e-15:
        return IDENTITY.copy()
    return cayley(np.tan(0.5 * theta) * omega / w)


def geodesic_angle(q1, q2):
    """Rotation angle of ``conj(q1) (x) q2`` in radians, in ``[0, pi]``."""
    d = np.abs(np.sum(np.asarray(q1) * np.asarray(q2), axis=-1))
    return 2.0 * np.arccos(np.clip(d, 0.0, 1.0))


def rotation_vector(q):
    """Axis-angle vector of ``q``; used for reporting per-axis errors."""
    q = canonical(q)
    s = np.clip(q[..., :1], -1.0, 1.0)
    v = q[..., 1:]
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(n, s)
    scale = np.where(n > 1e-12, angle / np.where(n > 1e-12, n, 1.0), 2.0)
    return v * scale


def same_rotation(q1, q2, tol=1e-9):
    """Rotation-level equality (ignores the double-cover sign)."""
    return bool(abs(abs(float(np.dot(q1, q2))) - 1.0) <= tol)


def random_unit(rng, size=None):
    """Uniform sample on SO(3): a normalized 4-D Gaussian."""
    shape = (4,) if size is None else (size, 4)
    return normalize(rng.standard_normal(shape))
