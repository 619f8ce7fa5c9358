"""Linear-algebra and geometry primitives on 3x3 matrices and SO(3).

Functions broadcast over leading axes where that is cheap, so a stack of
matrices with shape ``(..., 3, 3)`` is accepted alongside a single matrix.

Two inner products are exposed.  ``dot_frobenius`` is the plain entrywise
sum; ``dot_half`` is half of it, under which a rotation by angle ``t``
satisfies ``dot_half(R, I) = 1/2 + cos t``.  All equilibrium exponents and
the one-dimensional coefficient formulas use ``dot_half``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AngleAtPi, PoleSingularity, SingularFlux

ORTHO_TOL = 1e-10
POLE_TOL = 1e-9


def cross_matrix(u):
    """Return ``[u]_x`` so that ``cross_matrix(u) @ v == cross(u, v)``."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape[:-1] + (3, 3))
    out[..., 0, 1] = -u[..., 2]
    out[..., 0, 2] = u[..., 1]
    out[..., 1, 0] = u[..., 2]
    out[..., 1, 2] = -u[..., 0]
    out[..., 2, 0] = -u[..., 1]
    out[..., 2, 1] = u[..., 0]
    return out


def vee(X):
    """Inverse of :func:`cross_matrix` applied to the antisymmetric part of X."""
    X = np.asarray(X, dtype=float)
    return 0.5 * np.stack(
        [X[..., 2, 1] - X[..., 1, 2], X[..., 0, 2] - X[..., 2, 0], X[..., 1, 0] - X[..., 0, 1]],
        axis=-1,
    )


def dot_frobenius(M, N):
    return np.sum(np.asarray(M) * np.asarray(N), axis=(-2, -1))


def dot_half(M, N):
    return 0.5 * dot_frobenius(M, N)


def is_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3) or not np.all(np.isfinite(R)):
        return False
    eye = np.eye(3)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max()
    det = np.linalg.det(R)
    return bool(err <= tol and np.all(np.abs(det - 1.0) <= tol))


def exp_so3(b):
    """Rodrigues formula for ``exp([b]_x)``."""
    b = np.asarray(b, dtype=float)
    t = np.linalg.norm(b, axis=-1)[..., None, None]
    K = cross_matrix(b)
    K2 = K @ K
    small = t < 1e-6
    t_safe = np.where(small, 1.0, t)
    s1 = np.where(small, 1.0 - t**2 / 6.0, np.sin(t_safe) / t_safe)
    s2 = np.where(small, 0.5 - t**2 / 24.0, (1.0 - np.cos(t_safe)) / t_safe**2)
    return np.eye(3) + s1 * K + s2 * K2


def log_so3(R):
    """Axis-angle vector ``b`` with ``exp_so3(b) == R`` and ``|b| < pi``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    if np.any(tr <= -1.0 + 1e-12):
        raise AngleAtPi("rotation angle is pi; logarithm is not unique")
    c = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    t = np.arccos(c)
    w = 0.5 * vee(R - np.swapaxes(R, -1, -2))  # = sin(t) * axis
    small = t < 1e-6
    t_safe = np.where(small, 1.0, t)
    scale = np.where(small, 1.0 + t**2 / 6.0, t_safe / np.sin(t_safe))
    return scale[..., None] * w


def rotation_angle(R):
    tr = np.trace(np.asarray(R, dtype=float), axis1=-2, axis2=-1)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def tangent_projection(A, M):
    """Orthogonal projection of M onto the tangent space of SO(3) at A."""
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - A @ np.swapaxes(M, -1, -2) @ A)


def normal_projection(A, M):
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + A @ np.swapaxes(M, -1, -2) @ A)


def polar_decompose(M, tol=1e-12):
    """Rotation factor ``M (M^T M)^{-1/2}`` of a matrix with positive determinant.

    Computed from the symmetric eigendecomposition of ``M^T M``.  Raises
    :class:`SingularFlux` when ``det M <= tol`` or the smallest singular value
    is below ``tol``.
    """
    M = np.asarray(M, dtype=float)
    S = np.swapaxes(M, -1, -2) @ M
    lam, V = np.linalg.eigh(S)
    det = np.linalg.det(M)
    if np.any(det <= tol) or np.any(lam[..., 0] <= tol * tol):
        raise SingularFlux(f"flux moment is singular or orientation-reversing (det={np.min(det):.3e})")
    inv_sqrt = (V / np.sqrt(lam)[..., None, :]) @ np.swapaxes(V, -1, -2)
    return M @ inv_sqrt


def random_rotation(rng, size=None):
    """Haar-distributed rotations via QR of Gaussian matrices."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    G = rng.standard_normal(shape + (3, 3))
    Q, Rr = np.linalg.qr(G)
    d = np.sign(np.diagonal(Rr, axis1=-2, axis2=-1))
    Q = Q * d[..., None, :]
    det = np.linalg.det(Q)
    Q[..., :, 0] *= det[..., None]
    return Q


def random_antisymmetric(rng, size=None):
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    return cross_matrix(rng.standard_normal(shape + (3,)))


# ----------------------------------------------------------------------------
# stereographic chart (north pole excluded)


@dataclass(frozen=True)
class StereoCoords:
    """Chart coordinates of the three columns of a frame."""

    phi: np.ndarray  # shape (..., 3): phi_1, phi_2, phi_3
    theta: np.ndarray

    @property
    def W(self):
        return 1.0 + self.phi**2 + self.theta**2


def stereo_to_vector(phi, theta):
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    W = 1.0 + phi**2 + theta**2
    return np.stack([2 * phi / W, 2 * theta / W, (phi**2 + theta**2 - 1.0) / W], axis=-1)


def stereo_jacobian(phi, theta):
    """Partial derivatives of :func:`stereo_to_vector` in phi and theta."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    W2 = (1.0 + phi**2 + theta**2) ** 2
    d_phi = np.stack([2 * (1 - phi**2 + theta**2) / W2, -4 * phi * theta / W2, 4 * phi / W2], axis=-1)
    d_theta = np.stack([-4 * phi * theta / W2, 2 * (1 + phi**2 - theta**2) / W2, 4 * theta / W2], axis=-1)
    return d_phi, d_theta


def vector_to_stereo(n, tol=POLE_TOL):
    n = np.asarray(n, dtype=float)
    if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1.0) > ORTHO_TOL):
        raise ValueError("vector_to_stereo expects unit vectors")
    if np.any(n[..., 2] >= 1.0 - tol):
        raise PoleSingularity("unit vector at the north pole (0, 0, 1) is outside the chart")
    den = 1.0 - n[..., 2]
    return n[..., 0] / den, n[..., 1] / den


def frame_to_stereo(Lam):
    """Chart coordinates of the columns ``Lam e_1, Lam e_2, Lam e_3``."""
    Lam = np.asarray(Lam, dtype=float)
    cols = np.swapaxes(Lam, -1, -2)  # (..., column index, component)
    phi, theta = vector_to_stereo(cols)
    return StereoCoords(phi=phi, theta=theta)


def stereo_to_frame(c: StereoCoords):
    """Return the three reconstructed columns (Omega, u, v)."""
    cols = stereo_to_vector(c.phi, c.theta)
    return cols[..., 0, :], cols[..., 1, :], cols[..., 2, :]


def frame_matrix(Omega, u, v):
    return np.stack([Omega, u, v], axis=-1)
