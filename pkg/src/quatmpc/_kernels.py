"""Compiled inner loops.

These mirror :func:`quatmpc.dynamics.discrete_dynamics`,
:func:`quatmpc.dynamics.state_error` and :func:`quatmpc.ilqr.backward_pass`
for single states; the tests hold them to the numpy implementations.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _deriv(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, out):
    w0, w1, w2 = x[10], x[11], x[12]
    qs, qx, qy, qz = x[3], x[4], x[5], x[6]
    out[0] = x[7]
    out[1] = x[8]
    out[2] = x[9]
    # 0.5 * q (x) [0, w]
    out[3] = 0.5 * (-qx * w0 - qy * w1 - qz * w2)
    out[4] = 0.5 * (qs * w0 + qy * w2 - qz * w1)
    out[5] = 0.5 * (qs * w1 + qz * w0 - qx * w2)
    out[6] = 0.5 * (qs * w2 + qx * w1 - qy * w0)
    m0 = 0.0
    m1 = 0.0
    m2 = 0.0
    if wheel:
        out[7] = -gravity[0]
        out[8] = -gravity[1]
        out[9] = -gravity[2]
        m0 = u[0]
        m1 = u[1]
    else:
        fx = 0.0
        fy = 0.0
        fz = 0.0
        t0 = 0.0
        t1 = 0.0
        t2 = 0.0
        for i in range(feet.shape[0]):
            F0, F1, F2 = u[3 * i], u[3 * i + 1], u[3 * i + 2]
            a0 = feet[i, 0] - x[0]
            a1 = feet[i, 1] - x[1]
            a2 = feet[i, 2] - x[2]
            fx += F0
            fy += F1
            fz += F2
            t0 += a1 * F2 - a2 * F1
            t1 += a2 * F0 - a0 * F2
            t2 += a0 * F1 - a1 * F0
        out[7] = fx / mass - gravity[0]
        out[8] = fy / mass - gravity[1]
        out[9] = fz / mass - gravity[2]
        # conj(q) (x) t^ (x) q, homogeneous in q
        uu = qx * qx + qy * qy + qz * qz
        ut = qx * t0 + qy * t1 + qz * t2
        c0 = qy * t2 - qz * t1
        c1 = qz * t0 - qx * t2
        c2 = qx * t1 - qy * t0
        k = qs * qs - uu
        m0 = k * t0 + 2.0 * ut * qx - 2.0 * qs * c0
        m1 = k * t1 + 2.0 * ut * qy - 2.0 * qs * c1
        m2 = k * t2 + 2.0 * ut * qz - 2.0 * qs * c2
    i0 = inertia[0, 0] * w0 + inertia[0, 1] * w1 + inertia[0, 2] * w2
    i1 = inertia[1, 0] * w0 + inertia[1, 1] * w1 + inertia[1, 2] * w2
    i2 = inertia[2, 0] * w0 + inertia[2, 1] * w1 + inertia[2, 2] * w2
    r0 = m0 - (w1 * i2 - w2 * i1)
    r1 = m1 - (w2 * i0 - w0 * i2)
    r2 = m2 - (w0 * i1 - w1 * i0)
    for j in range(3):
        out[10 + j] = inertia_inv[j, 0] * r0 + inertia_inv[j, 1] * r1 + inertia_inv[j, 2] * r2


@njit(cache=True)
def midpoint_step(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, dt):
    f = np.empty(13)
    xm = np.empty(13)
    _deriv(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, f)
    for i in range(13):
        xm[i] = x[i] + 0.5 * dt * f[i]
    _deriv(xm, u, feet, mass, inertia, inertia_inv, gravity, wheel, f)
    xn = np.empty(13)
    for i in range(13):
        xn[i] = x[i] + dt * f[i]
    n = np.sqrt(xn[3] ** 2 + xn[4] ** 2 + xn[5] ** 2 + xn[6] ** 2)
    for i in range(3, 7):
        xn[i] /= n
    return xn


@njit(cache=True)
def srb_error(x, xr, out):
    """12-dim error; returns False on a chart singularity."""
    for i in range(3):
        out[i] = x[i] - xr[i]
        out[6 + i] = x[7 + i] - xr[7 + i]
        out[9 + i] = x[10 + i] - xr[10 + i]
    a0, a1, a2, a3 = xr[3], -xr[4], -xr[5], -xr[6]
    b0, b1, b2, b3 = x[3], x[4], x[5], x[6]
    s = a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3
    v0 = a0 * b1 + b0 * a1 + a2 * b3 - a3 * b2
    v1 = a0 * b2 + b0 * a2 + a3 * b1 - a1 * b3
    v2 = a0 * b3 + b0 * a3 + a1 * b2 - a2 * b1
    if s < 0.0:
        s, v0, v1, v2 = -s, -v0, -v1, -v2
    if s < 1e-8:
        return False
    out[3] = v0 / s
    out[4] = v1 / s
    out[5] = v2 / s
    return True


@njit(cache=True)
def srb_closed_loop(X, U, K, d, alpha, feet, mass, inertia, inertia_inv, gravity, wheel, dt, bound):
    """Closed-loop rollout; status 0 ok, 1 diverged, 2 chart singularity."""
    n = U.shape[0]
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    dx = np.empty(12)
    for k in range(n):
        if not srb_error(Xn[k], X[k], dx):
            return Xn, Un, 2
        Un[k] = U[k] + alpha * d[k] + K[k] @ dx
        Xn[k + 1] = midpoint_step(Xn[k], Un[k], feet, mass, inertia, inertia_inv, gravity, wheel, dt)
        for i in range(13):
            if not abs(Xn[k + 1, i]) < bound:
                return Xn, Un, 1
    return Xn, Un, 0


@njit(cache=True)
def srb_rollout(x0, U, feet, mass, inertia, inertia_inv, gravity, wheel, dt):
    n = U.shape[0]
    X = np.empty((n + 1, 13))
    X[0] = x0
    for k in range(n):
        X[k + 1] = midpoint_step(X[k], U[k], feet, mass, inertia, inertia_inv, gravity, wheel, dt)
    return X


@njit(cache=True)
def riccati(A, B, lx, lu, lxx, luu, lux, reg):
    """Same recursion as ``ilqr.backward_pass``; ``fail_knot >= 0`` flags a non-PD Q_uu."""
    N = B.shape[0]
    n = B.shape[1]
    m = B.shape[2]
    Ks = np.empty((N, m, n))
    ds = np.empty((N, m))
    P = lxx[N].copy()
    p = lx[N].copy()
    dV1 = 0.0
    dV2 = 0.0
    gmax = 0.0
    rhs = np.empty((m, n + 1))
    for k in range(N - 1, -1, -1):
        Ak = A[k]
        Bk = B[k]
        AtP = Ak.T @ P
        BtP = Bk.T @ P
        Qx = lx[k] + Ak.T @ p
        Qu = lu[k] + Bk.T @ p
        Qxx = lxx[k] + AtP @ Ak
        Quu = luu[k] + BtP @ Bk
        Qux = lux[k] + BtP @ Ak
        Quu_reg = Quu.copy()
        for i in range(m):
            Quu_reg[i, i] += reg
        # Cholesky by hand so that failure is a flag, not an exception
        L = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1):
                s = Quu_reg[i, j]
                for t in range(j):
                    s -= L[i, t] * L[j, t]
                if i == j:
                    if s <= 0.0:
                        return Ks, ds, dV1, dV2, gmax, k
                    L[i, i] = np.sqrt(s)
                else:
                    L[i, j] = s / L[j, j]
        rhs[:, :n] = Qux
        rhs[:, n] = Qu
        # forward / back substitution
        y = np.empty((m, n + 1))
        for i in range(m):
            row = rhs[i].copy()
            for t in range(i):
                row -= L[i, t] * y[t]
            y[i] = row / L[i, i]
        sol = np.empty((m, n + 1))
        for i in range(m - 1, -1, -1):
            row = y[i].copy()
            for t in range(i + 1, m):
                row -= L[t, i] * sol[t]
            sol[i] = row / L[i, i]
        Kk = -sol[:, :n]
        dk = -sol[:, n]
        KtQuu = Kk.T @ Quu
        P = Qxx + KtQuu @ Kk + Kk.T @ Qux + Qux.T @ Kk
        P = 0.5 * (P + P.T)
        p = Qx + KtQuu @ dk + Kk.T @ Qu + Qux.T @ dk
        Ks[k] = Kk
        ds[k] = dk
        dV1 += dk @ Qu
        dV2 += 0.5 * dk @ (Quu @ dk)
        for i in range(m):
            if abs(Qu[i]) > gmax:
                gmax = abs(Qu[i])
    return Ks, ds, dV1, dV2, gmax, -1


@njit(cache=True)
def rk4_step(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, dt):
    """Classical RK4 of the same vector field, then quaternion renormalization."""
    k1 = np.empty(13)
    k2 = np.empty(13)
    k3 = np.empty(13)
    k4 = np.empty(13)
    xs = np.empty(13)
    _deriv(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, k1)
    for i in range(13):
        xs[i] = x[i] + 0.5 * dt * k1[i]
    _deriv(xs, u, feet, mass, inertia, inertia_inv, gravity, wheel, k2)
    for i in range(13):
        xs[i] = x[i] + 0.5 * dt * k2[i]
    _deriv(xs, u, feet, mass, inertia, inertia_inv, gravity, wheel, k3)
    for i in range(13):
        xs[i] = x[i] + dt * k3[i]
    _deriv(xs, u, feet, mass, inertia, inertia_inv, gravity, wheel, k4)
    xn = np.empty(13)
    for i in range(13):
        xn[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    n = np.sqrt(xn[3] ** 2 + xn[4] ** 2 + xn[5] ** 2 + xn[6] ** 2)
    for i in range(3, 7):
        xn[i] /= n
    return xn


# ZYX Euler-angle model: state [r, (roll, pitch, yaw), v, omega_body]


@njit(cache=True)
def _euler_deriv(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, cos_floor, out):
    """Returns False at gimbal lock (``|cos(pitch)| < cos_floor``)."""
    cr, sr = np.cos(x[3]), np.sin(x[3])
    cp, sp = np.cos(x[4]), np.sin(x[4])
    cy, sy = np.cos(x[5]), np.sin(x[5])
    if abs(cp) < cos_floor:
        return False
    w0, w1, w2 = x[9], x[10], x[11]
    tp = sp / cp
    out[0] = x[6]
    out[1] = x[7]
    out[2] = x[8]
    out[3] = w0 + sr * tp * w1 + cr * tp * w2
    out[4] = cr * w1 - sr * w2
    out[5] = (sr * w1 + cr * w2) / cp
    m0 = 0.0
    m1 = 0.0
    m2 = 0.0
    if wheel:
        out[6] = -gravity[0]
        out[7] = -gravity[1]
        out[8] = -gravity[2]
        m0 = u[0]
        m1 = u[1]
    else:
        fx = 0.0
        fy = 0.0
        fz = 0.0
        t0 = 0.0
        t1 = 0.0
        t2 = 0.0
        for i in range(feet.shape[0]):
            F0, F1, F2 = u[3 * i], u[3 * i + 1], u[3 * i + 2]
            a0 = feet[i, 0] - x[0]
            a1 = feet[i, 1] - x[1]
            a2 = feet[i, 2] - x[2]
            fx += F0
            fy += F1
            fz += F2
            t0 += a1 * F2 - a2 * F1
            t1 += a2 * F0 - a0 * F2
            t2 += a0 * F1 - a1 * F0
        out[6] = fx / mass - gravity[0]
        out[7] = fy / mass - gravity[1]
        out[8] = fz / mass - gravity[2]
        # R^T t with R = Rz Ry Rx
        m0 = cy * cp * t0 + sy * cp * t1 - sp * t2
        m1 = (cy * sp * sr - sy * cr) * t0 + (sy * sp * sr + cy * cr) * t1 + cp * sr * t2
        m2 = (cy * sp * cr + sy * sr) * t0 + (sy * sp * cr - cy * sr) * t1 + cp * cr * t2
    i0 = inertia[0, 0] * w0 + inertia[0, 1] * w1 + inertia[0, 2] * w2
    i1 = inertia[1, 0] * w0 + inertia[1, 1] * w1 + inertia[1, 2] * w2
    i2 = inertia[2, 0] * w0 + inertia[2, 1] * w1 + inertia[2, 2] * w2
    r0 = m0 - (w1 * i2 - w2 * i1)
    r1 = m1 - (w2 * i0 - w0 * i2)
    r2 = m2 - (w0 * i1 - w1 * i0)
    for j in range(3):
        out[9 + j] = inertia_inv[j, 0] * r0 + inertia_inv[j, 1] * r1 + inertia_inv[j, 2] * r2
    return True


@njit(cache=True)
def _euler_midpoint(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, dt, cos_floor, xn):
    f = np.empty(12)
    xm = np.empty(12)
    if not _euler_deriv(x, u, feet, mass, inertia, inertia_inv, gravity, wheel, cos_floor, f):
        return False
    for i in range(12):
        xm[i] = x[i] + 0.5 * dt * f[i]
    if not _euler_deriv(xm, u, feet, mass, inertia, inertia_inv, gravity, wheel, cos_floor, f):
        return False
    for i in range(12):
        xn[i] = x[i] + dt * f[i]
    return True


@njit(cache=True)
def _wrap(a):
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


@njit(cache=True)
def euler_closed_loop(X, U, K, d, alpha, feet, mass, inertia, inertia_inv, gravity, wheel, dt, cos_floor, bound):
    """Closed-loop rollout; status 0 ok, 1 diverged, 3 gimbal lock."""
    n = U.shape[0]
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    dx = np.empty(12)
    for k in range(n):
        for i in range(12):
            dx[i] = Xn[k, i] - X[k, i]
        for i in range(3, 6):
            dx[i] = _wrap(dx[i])
        Un[k] = U[k] + alpha * d[k] + K[k] @ dx
        if not _euler_midpoint(Xn[k], Un[k], feet, mass, inertia, inertia_inv, gravity, wheel, dt, cos_floor, Xn[k + 1]):
            return Xn, Un, 3
        for i in range(12):
            if not abs(Xn[k + 1, i]) < bound:
                return Xn, Un, 1
    return Xn, Un, 0


@njit(cache=True)
def euler_rollout(x0, U, feet, mass, inertia, inertia_inv, gravity, wheel, dt, cos_floor):
    """Open-loop rollout; status 0 ok, 3 gimbal lock."""
    n = U.shape[0]
    X = np.empty((n + 1, 12))
    X[0] = x0
    for k in range(n):
        if not _euler_midpoint(X[k], U[k], feet, mass, inertia, inertia_inv, gravity, wheel, dt, cos_floor, X[k + 1]):
            return X, 3
    return X, 0


@njit(cache=True)
def euler_jacobians(X, U, feet, mass, inertia, inertia_inv, gravity, wheel, dt, cos_floor, eps):
    """Central-difference ``A (N, 12, 12)`` and ``B (N, 12, nu)``; status 3 at gimbal lock."""
    n, nu = U.shape
    A = np.empty((n, 12, 12))
    B = np.empty((n, 12, nu))
    xp = np.empty(12)
    up = np.empty(nu)
    fp = np.empty(12)
    fm = np.empty(12)
    for k in range(n):
        for j in range(12 + nu):
            for s in range(2):
                xp[:] = X[k]
                up[:] = U[k]
                h = eps if s == 0 else -eps
                if j < 12:
                    xp[j] += h
                else:
                    up[j - 12] += h
                out = fp if s == 0 else fm
                if not _euler_midpoint(xp, up, feet, mass, inertia, inertia_inv, gravity, wheel, dt, cos_floor, out):
                    return A, B, 3
            for i in range(12):
                g = (fp[i] - fm[i]) / (2.0 * eps)
                if j < 12:
                    A[k, i, j] = g
                else:
                    B[k, i, j - 12] = g
    return A, B, 0
