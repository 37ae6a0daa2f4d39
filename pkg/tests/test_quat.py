import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from quatmpc import quat
from quatmpc.exceptions import NearSingularChart

RNG = np.random.default_rng(1234)


def hamilton(a, b):
    """Componentwise Hamilton product, written out independently of lmat."""
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return np.array(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ]
    )


def rotz(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


unit_vectors = st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 0.1
)


def test_lmat_identity_and_unit_x():
    assert_allclose(quat.lmat(quat.IDENTITY), np.eye(4))
    L = quat.lmat([0.0, 1.0, 0.0, 0.0])
    assert_allclose(L[0], [0.0, -1.0, 0.0, 0.0])
    assert_allclose(L[:, 0], [0.0, 1.0, 0.0, 0.0])


def test_lmat_rmat_match_hamilton_product():
    for _ in range(100):
        a, b = RNG.normal(size=4), RNG.normal(size=4)
        ref = hamilton(a, b)
        assert_allclose(quat.lmat(a) @ b, ref, atol=1e-12)
        assert_allclose(quat.rmat(b) @ a, ref, atol=1e-12)
        assert_allclose(quat.quat_mul(a, b), ref, atol=1e-12)


def test_quat_mul_composes_rotations():
    qz = np.array([np.sqrt(0.5), 0.0, 0.0, np.sqrt(0.5)])
    assert_allclose(quat.quat_mul(qz, qz), [0.0, 0.0, 0.0, 1.0], atol=1e-15)
    assert_allclose(quat.to_rotmat(quat.quat_mul(qz, qz)), rotz(np.pi), atol=1e-12)
    q = quat.random_unit(RNG)
    assert_allclose(quat.quat_mul(quat.IDENTITY, q), q)
    assert_allclose(quat.quat_mul(q, quat.conj(q)), quat.IDENTITY, atol=1e-12)


def test_conj_and_hat():
    assert_allclose(quat.conj(quat.IDENTITY), quat.IDENTITY)
    assert_allclose(quat.conj([0.0, 1.0, 0.0, 0.0]), [0.0, -1.0, 0.0, 0.0])
    assert_allclose(quat.hat_vec(np.zeros(3)), np.zeros(4))
    assert_allclose(quat.hat_vec([1.0, 2.0, 3.0]), [0.0, 1.0, 2.0, 3.0])
    v = RNG.normal(size=3)
    assert_allclose(quat.H.T @ quat.hat_vec(v), v)


def test_cayley_values():
    assert_allclose(quat.cayley(np.zeros(3)), quat.IDENTITY)
    r = 1.0 / np.sqrt(2.0)
    assert_allclose(quat.cayley([1.0, 0.0, 0.0]), [r, r, 0.0, 0.0])
    assert_allclose(quat.cayley_inv(quat.IDENTITY), np.zeros(3))
    assert_allclose(quat.cayley_inv([r, r, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_cayley_round_trip_and_double_cover():
    for _ in range(100):
        phi = RNG.normal(size=3)
        phi *= RNG.uniform(0.0, 10.0) / np.linalg.norm(phi)
        assert_allclose(quat.cayley_inv(quat.cayley(phi)), phi, rtol=1e-10, atol=1e-12)
        q = quat.random_unit(RNG)
        assert_allclose(quat.cayley_inv(q), quat.cayley_inv(-q))


def test_cayley_inv_raises_near_half_turn():
    with pytest.raises(NearSingularChart):
        quat.cayley_inv([0.0, 1.0, 0.0, 0.0])


def test_attitude_jacobian_properties():
    assert_allclose(quat.attitude_jacobian(quat.IDENTITY), quat.H)
    for _ in range(100):
        q = quat.random_unit(RNG)
        G = quat.attitude_jacobian(q)
        assert_allclose(G.T @ G, np.eye(3), atol=1e-12)
        assert_allclose(G, quat.lmat(q) @ quat.H)


def _fd_phi(f, q, eps=1e-6):
    """Central differences of f(q (x) cayley(phi)) at phi = 0."""
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        cols.append((f(quat.quat_mul(q, quat.cayley(e))) - f(quat.quat_mul(q, quat.cayley(-e)))) / (2 * eps))
    return np.stack(cols, axis=-1)


def test_scalar_gradient_matches_finite_differences():
    b = RNG.normal(size=4)
    for _ in range(20):
        q = quat.random_unit(RNG)
        W = RNG.normal(size=(4, 4))

        def h(p):
            return float(b @ p + 0.5 * p @ W @ p)

        g = quat.scalar_fn_gradient(b + 0.5 * (W + W.T) @ q, q)
        assert_allclose(g, _fd_phi(h, q), rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("side", ["left", "right"])
def test_quat_fn_jacobian_matches_finite_differences(side):
    for _ in range(20):
        p, q = quat.random_unit(RNG), quat.random_unit(RNG)
        if side == "left":
            f, J = (lambda z: quat.quat_mul(p, z)), quat.lmat(p)
        else:
            f, J = (lambda z: quat.quat_mul(z, p)), quat.rmat(p)
        fq = f(q)
        analytic = quat.quat_fn_jacobian(J, q, fq)
        numeric = quat.attitude_jacobian(fq).T @ _fd_phi(f, q)
        assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_quat_fn_jacobian_identity_map():
    q = quat.random_unit(RNG)
    assert_allclose(quat.quat_fn_jacobian(np.eye(4), q, q), np.eye(3), atol=1e-12)


def test_scalar_hessian_cases():
    q = quat.random_unit(RNG)
    assert_allclose(quat.scalar_fn_hessian(np.zeros(4), np.zeros((4, 4)), q), np.zeros((3, 3)))
    # h(q) = qbar . q at q = qbar
    assert_allclose(quat.scalar_fn_hessian(q, np.zeros((4, 4)), q), -np.eye(3), atol=1e-12)


def test_scalar_hessian_matches_second_differences():
    eps = 1e-4
    for _ in range(20):
        q = quat.random_unit(RNG)
        W = RNG.normal(size=(4, 4))
        W = W + W.T
        b = RNG.normal(size=4)

        def h(p):
            return float(b @ p + 0.5 * p @ W @ p)

        Hs = quat.scalar_fn_hessian(b + W @ q, W, q)
        num = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                ei, ej = np.eye(3)[i] * eps, np.eye(3)[j] * eps
                f = [h(quat.quat_mul(q, quat.cayley(si * ei + sj * ej))) for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
                num[i, j] = (f[0] - f[1] - f[2] + f[3]) / (4 * eps * eps)
        assert_allclose(Hs, num, atol=1e-4 * max(1.0, np.abs(num).max()))


def test_rotate_cases():
    v = RNG.normal(size=3)
    assert_allclose(quat.rotate(quat.IDENTITY, v), v)
    qz = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    assert_allclose(quat.rotate(qz, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)
    assert_allclose(quat.rotate(qz, v), rotz(np.pi / 2) @ v, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(unit_vectors, st.lists(st.floats(-10.0, 10.0), min_size=3, max_size=3))
def test_rotate_isometry_and_inverse(qraw, v):
    q = quat.normalize(np.array(qraw))
    v = np.array(v)
    w = quat.rotate(q, v)
    assert np.isclose(np.linalg.norm(w), np.linalg.norm(v), rtol=1e-12, atol=1e-12)
    assert_allclose(quat.rotate(quat.conj(q), w), v, atol=1e-10)
    assert_allclose(quat.rotate(-q, v), w, atol=1e-12)


def test_rotation_increment_is_exact_rotation():
    omega = np.array([0.3, -0.2, 0.9])
    q = quat.rotation_increment(omega, 0.5)
    angle = np.linalg.norm(omega) * 0.5
    assert_allclose(q, quat.from_axis_angle(omega, angle), atol=1e-14)
