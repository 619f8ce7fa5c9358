import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from attitude_hydro.errors import AngleAtPi, PoleSingularity, SingularFlux
from attitude_hydro.so3 import (
    cross_matrix,
    dot_half,
    exp_so3,
    frame_matrix,
    frame_to_stereo,
    is_rotation,
    log_so3,
    normal_projection,
    polar_decompose,
    random_rotation,
    rotation_angle,
    stereo_jacobian,
    stereo_to_frame,
    stereo_to_vector,
    tangent_projection,
    vector_to_stereo,
    vee,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)
mat3 = arrays(np.float64, (3, 3), elements=finite)


@given(vec3)
def test_vee_inverts_cross_matrix(u):
    np.testing.assert_allclose(vee(cross_matrix(u)), u, atol=1e-15)
    np.testing.assert_allclose(cross_matrix(u) @ np.array([1.0, -2.0, 0.5]), np.cross(u, [1.0, -2.0, 0.5]),
                               atol=1e-13)


@given(vec3)
def test_exp_is_rotation_and_log_inverts(b):
    n = np.linalg.norm(b)
    if n > 3.0:
        b = b * 3.0 / n
    R = exp_so3(b)
    assert is_rotation(R)
    np.testing.assert_allclose(log_so3(R), b, atol=1e-8)
    assert rotation_angle(R) == pytest.approx(np.linalg.norm(b), abs=1e-7)


def test_exp_small_angle_branch():
    b = np.array([1e-8, -2e-8, 3e-9])
    np.testing.assert_allclose(exp_so3(b), np.eye(3) + cross_matrix(b), atol=1e-15)


def test_log_at_pi_raises():
    with pytest.raises(AngleAtPi):
        log_so3(np.diag([1.0, -1.0, -1.0]))


@given(mat3, st.integers(0, 2**32 - 1))
def test_projections_split_matrix(M, seed):
    A = random_rotation(np.random.default_rng(seed))
    T, N = tangent_projection(A, M), normal_projection(A, M)
    np.testing.assert_allclose(T + N, M, atol=1e-12)
    # A^T T is antisymmetric, A^T N symmetric, and they are orthogonal
    X = A.T @ T
    np.testing.assert_allclose(X, -X.T, atol=1e-12)
    Y = A.T @ N
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)
    assert abs(dot_half(T, N)) < 1e-10 * (1 + np.sum(M * M))


@given(st.integers(0, 2**32 - 1))
def test_dot_half_is_shifted_cosine(seed):
    rng = np.random.default_rng(seed)
    A, L = random_rotation(rng, 2)
    assert dot_half(A, L) == pytest.approx(0.5 + np.cos(rotation_angle(L.T @ A)), abs=1e-12)


@given(st.integers(0, 2**32 - 1), arrays(np.float64, 3, elements=st.floats(0.2, 5.0)))
def test_polar_recovers_rotation_factor(seed, sv):
    rng = np.random.default_rng(seed)
    R, V = random_rotation(rng, 2)
    M = R @ V @ np.diag(sv) @ V.T
    np.testing.assert_allclose(polar_decompose(M), R, atol=1e-10)


def test_polar_singular_and_reflection():
    with pytest.raises(SingularFlux):
        polar_decompose(np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(SingularFlux):
        polar_decompose(np.diag([1.0, 1.0, -1.0]))


def test_random_rotation_batch(rng):
    R = random_rotation(rng, 50)
    assert R.shape == (50, 3, 3)
    assert is_rotation(R)
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_stereo_roundtrip(phi, theta):
    n = stereo_to_vector(phi, theta)
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
    p2, t2 = vector_to_stereo(n)
    assert p2 == pytest.approx(phi, rel=1e-8, abs=1e-9)
    assert t2 == pytest.approx(theta, rel=1e-8, abs=1e-9)


def test_stereo_jacobian_matches_differences():
    phi, theta, h = 0.3, -1.2, 1e-6
    dp, dt = stereo_jacobian(phi, theta)
    fd_p = (stereo_to_vector(phi + h, theta) - stereo_to_vector(phi - h, theta)) / (2 * h)
    fd_t = (stereo_to_vector(phi, theta + h) - stereo_to_vector(phi, theta - h)) / (2 * h)
    np.testing.assert_allclose(dp, fd_p, atol=1e-8)
    np.testing.assert_allclose(dt, fd_t, atol=1e-8)


def test_frame_roundtrip_and_pole(rng):
    L = random_rotation(rng)
    c = frame_to_stereo(L)
    np.testing.assert_allclose(frame_matrix(*stereo_to_frame(c)), L, atol=1e-10)
    with pytest.raises(PoleSingularity):
        frame_to_stereo(np.eye(3)[:, [2, 0, 1]])
