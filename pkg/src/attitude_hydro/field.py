"""Haar quadrature on SO(3) and discrete differential operators on it.

Nodes are ZYZ Euler angles ``A = Rz(alpha) Ry(beta) Rz(gamma)`` on a tensor
grid: uniform periodic nodes in alpha and gamma, Gauss-Legendre nodes in
``cos(beta)``.  Fields over the grid are arrays whose last axis has length
``grid.size`` (C order over ``(alpha, beta, gamma)``); any leading axes are
batch axes, which lets a whole spatial mesh of cells be processed at once.

Body-frame derivatives ``X_i f(A) = d/dt f(A exp(t [e_i]_x))`` use Fourier
differentiation in alpha and gamma.  In beta, each Fourier mode ``(m, n)``
is even or odd under ``beta -> -beta`` according to the parity of ``m + n``
(the Euler chart identifies ``(alpha, -beta, gamma)`` with
``(alpha + pi, beta, gamma + pi)``).  Even parts are interpolated as
polynomials in ``cos(beta)`` and odd parts as ``sin(beta)`` times such a
polynomial, so first-degree matrix entries are differentiated exactly.

The metric makes ``{A [e_i]_x}`` orthonormal under the half-trace product.
The divergence is the exact weighted adjoint of minus the gradient.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateKernel, GridTooCoarse, SizeMismatch, SolverSingular

DEFAULT_SHAPE = (25, 12, 25)


def _euler_zyz(alpha, beta, gamma):
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    R = np.empty(np.broadcast(alpha, beta, gamma).shape + (3, 3))
    R[..., 0, 0] = ca * cb * cg - sa * sg
    R[..., 0, 1] = -ca * cb * sg - sa * cg
    R[..., 0, 2] = ca * sb
    R[..., 1, 0] = sa * cb * cg + ca * sg
    R[..., 1, 1] = -sa * cb * sg + ca * cg
    R[..., 1, 2] = sa * sb
    R[..., 2, 0] = -sb * cg
    R[..., 2, 1] = sb * sg
    R[..., 2, 2] = cb
    return R


def euler_zyz(alpha, beta, gamma):
    """Rotation ``Rz(alpha) Ry(beta) Rz(gamma)``."""
    return _euler_zyz(np.asarray(alpha, float), np.asarray(beta, float), np.asarray(gamma, float))


def fourier_diff_matrix(n):
    """Spectral differentiation matrix on ``n`` equispaced periodic nodes."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    eye = np.eye(n)
    return np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(eye, axis=0), axis=0))


def fourier_shift_matrix(n, shift):
    """Trigonometric-interpolation operator ``f(x) -> f(x + shift)``."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    eye = np.eye(n)
    return np.real(np.fft.ifft(np.exp(1j * k * shift)[:, None] * np.fft.fft(eye, axis=0), axis=0))


def lagrange_diff_matrix(x):
    """Differentiation matrix of polynomial interpolation through nodes ``x``."""
    x = np.asarray(x, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    c = np.prod(diff, axis=1)
    D = (c[:, None] / c[None, :]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@dataclass
class EulerGrid:
    """Haar-weighted tensor quadrature on SO(3).

    ``rotations[q]`` and ``weights[q]`` give the node matrices and probability
    weights; the Euler angles are kept for the differential operators.
    """

    n_alpha: int
    n_beta: int
    n_gamma: int
    alpha: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    rotations: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    w_beta: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return (self.n_alpha, self.n_beta, self.n_gamma)

    @property
    def size(self):
        return self.n_alpha * self.n_beta * self.n_gamma

    # derived node data ---------------------------------------------------
    @property
    def angles(self):
        """Broadcastable (alpha, beta, gamma) arrays of shape ``grid.shape``."""
        return (
            self.alpha[:, None, None],
            self.beta[None, :, None],
            self.gamma[None, None, :],
        )

    def __eq__(self, other):
        return isinstance(other, EulerGrid) and self.shape == other.shape

    def __hash__(self):
        return hash(self.shape)


def build_grid(n_alpha=DEFAULT_SHAPE[0], n_beta=DEFAULT_SHAPE[1], n_gamma=DEFAULT_SHAPE[2]) -> EulerGrid:
    """Build the Euler-angle quadrature grid.

    ``n_alpha`` and ``n_gamma`` must be odd and at least 9: with an even count
    the Nyquist checkerboard mode is annihilated by every discrete derivative
    and would give the Fokker-Planck operator a spurious second null vector.
    """
    for name, n in (("n_alpha", n_alpha), ("n_gamma", n_gamma)):
        if n < 9:
            raise GridTooCoarse(f"{name}={n} is below the minimum of 9")
        if n % 2 == 0:
            raise GridTooCoarse(f"{name}={n} must be odd (even counts leave a spurious null mode)")
    if n_beta < 4:
        raise GridTooCoarse(f"n_beta={n_beta} is below the minimum of 4")
    alpha = 2 * np.pi * np.arange(n_alpha) / n_alpha
    gamma = 2 * np.pi * np.arange(n_gamma) / n_gamma
    x, wx = np.polynomial.legendre.leggauss(n_beta)
    beta = np.arccos(x)
    # probability normalization: (2 pi / n_alpha)(2 pi / n_gamma) wx / (8 pi^2)
    w_beta = wx / 2.0
    weights = (np.ones((n_alpha, 1, 1)) * w_beta[None, :, None] * np.ones((1, 1, n_gamma))).ravel()
    weights = weights / (n_alpha * n_gamma)
    A, B, C = np.meshgrid(alpha, beta, gamma, indexing="ij")
    rotations = _euler_zyz(A, B, C).reshape(-1, 3, 3)
    return EulerGrid(n_alpha, n_beta, n_gamma, alpha, beta, gamma, rotations, weights, w_beta)


def integrate(grid: EulerGrid, f):
    """Haar integral of a field (batched over leading axes)."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.size:
        raise SizeMismatch(f"field has {f.shape[-1]} values, grid has {grid.size} nodes")
    return f @ grid.weights


def inner(grid: EulerGrid, f, g):
    return integrate(grid, np.asarray(f) * np.asarray(g))


class Operators:
    """Body-frame gradient, divergence and Fokker-Planck operators on a grid."""

    def __init__(self, grid: EulerGrid):
        self.grid = grid
        na, nb, ng = grid.shape
        self.d_alpha = fourier_diff_matrix(na)
        self.d_gamma = fourier_diff_matrix(ng)
        self.s_alpha = fourier_shift_matrix(na, np.pi)
        self.s_gamma = fourier_shift_matrix(ng, np.pi)
        x = np.cos(grid.beta)
        sb = np.sin(grid.beta)
        cb = x
        Dx = lagrange_diff_matrix(x)
        self.d_even = -sb[:, None] * Dx
        self.d_odd = np.diag(cb / sb) - (sb**2)[:, None] * Dx / sb[None, :]
        self._db_plus = 0.5 * (self.d_even + self.d_odd)
        self._db_minus = 0.5 * (self.d_even - self.d_odd)
        _, _, g = grid.angles
        sb3 = sb[None, :, None]
        cb3 = cb[None, :, None]
        cg, sg = np.cos(g), np.sin(g)
        one = np.ones(grid.shape)
        # X_i = coef[i][0] d_alpha + coef[i][1] d_beta + coef[i][2] d_gamma
        self._coef = [
            [-cg / sb3 * one, sg * one, cb3 * cg / sb3 * one],
            [sg / sb3 * one, cg * one, -cb3 * sg / sb3 * one],
            [0.0 * one, 0.0 * one, one],
        ]
        self.w3 = grid.weights.reshape(grid.shape)
        self._precond_cache = {}

    # elementary one-axis derivatives on arrays shaped (..., na, nb, ng) ------
    def _ax_alpha(self, f, mat):
        shp = f.shape
        return (mat @ f.reshape(shp[:-3] + (shp[-3], shp[-2] * shp[-1]))).reshape(shp)

    def _ax_beta(self, f, mat):
        return mat @ f

    def _ax_gamma(self, f, mat):
        return f @ mat.T

    def _shift(self, f):
        return self._ax_gamma(self._ax_alpha(f, self.s_alpha), self.s_gamma)

    def _da(self, f):
        return self._ax_alpha(f, self.d_alpha)

    def _dg(self, f):
        return self._ax_gamma(f, self.d_gamma)

    def _db(self, f):
        # even/odd split under the pi-shift, each part with its own beta matrix
        return self._ax_beta(f, self._db_plus) + self._ax_beta(self._shift(f), self._db_minus)

    def _da_T(self, f):
        return self._ax_alpha(f, self.d_alpha.T)

    def _dg_T(self, f):
        return self._ax_gamma(f, self.d_gamma.T)

    def _db_T(self, f):
        return self._ax_beta(f, self._db_plus.T) + self._shift(self._ax_beta(f, self._db_minus.T))

    def _reshape(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.grid.size:
            raise SizeMismatch(f"field has {f.shape[-1]} values, grid has {self.grid.size} nodes")
        return f.reshape(f.shape[:-1] + self.grid.shape)

    # public operators -------------------------------------------------------
    def grad(self, f):
        """Body-frame gradient; returns shape ``(..., size, 3)``."""
        F = self._reshape(f)
        da, db, dg = self._da(F), self._db(F), self._dg(F)
        out = []
        for ca, cb, cg in self._coef:
            out.append(ca * da + cb * db + cg * dg)
        out = np.stack(out, axis=-1)
        return out.reshape(out.shape[:-4] + (self.grid.size, 3))

    def grad_T_weighted(self, V):
        """``sum_i X_i^T (w V_i)``: the transpose of ``grad`` after weighting."""
        V = np.asarray(V, dtype=float)
        shp = V.shape[:-2] + self.grid.shape
        Vs = [V[..., i].reshape(shp) * self.w3 for i in range(3)]
        ta = sum(self._coef[i][0] * Vs[i] for i in range(3))
        tb = sum(self._coef[i][1] * Vs[i] for i in range(3))
        tg = sum(self._coef[i][2] * Vs[i] for i in range(3))
        out = self._da_T(ta) + self._db_T(tb) + self._dg_T(tg)
        return out.reshape(V.shape[:-2] + (self.grid.size,))

    def div(self, V):
        """Weighted adjoint of ``-grad``: ``<div V, g> = -<V, grad g>``."""
        return -self.grad_T_weighted(V) / self.grid.weights

    def weighted_laplacian_form(self, g, weight):
        """``sum_i X_i^T W diag(weight) X_i g`` (the stiffness form in ``g``)."""
        G = self.grad(g)
        return self.grad_T_weighted(G * np.asarray(weight)[..., None])

    def fokker_planck(self, f, M, d):
        """``d div(M grad(f / M))`` for equilibrium values ``M``."""
        g = np.asarray(f) / M
        return -d * self.weighted_laplacian_form(g, M) / self.grid.weights

    # dense assembly (coarse grids, oracles, export) --------------------------
    def grad_matrix(self):
        """Dense ``(3 N, N)`` gradient matrix; rows ordered node-major."""
        n = self.grid.size
        G = self.grad(np.eye(n))  # (n_cols, n, 3): column j holds grad of e_j
        return np.transpose(G, (1, 2, 0)).reshape(3 * n, n)

    def fokker_planck_matrix(self, M, d):
        n = self.grid.size
        return self.fokker_planck(np.eye(n), M, d).T

    # preconditioner ---------------------------------------------------------
    def _mode_blocks(self, sigma, tau):
        """Per-Fourier-mode blocks of ``sigma W + tau L0`` (L0: unweighted Laplacian)."""
        key = (float(sigma), float(tau))
        if key in self._precond_cache:
            return self._precond_cache[key]
        na, nb, ng = self.grid.shape
        m = np.fft.fftfreq(na, d=1.0 / na)
        nn = np.fft.fftfreq(ng, d=1.0 / ng)
        sb = np.sin(self.grid.beta)
        cb = np.cos(self.grid.beta)
        wb = self.grid.w_beta
        De, Do = self.d_even, self.d_odd
        Ke = De.T @ (wb[:, None] * De)
        Ko = Do.T @ (wb[:, None] * Do)
        M_, N_ = np.meshgrid(m, nn, indexing="ij")
        diag = (
            (M_[..., None] - N_[..., None] * cb) ** 2 / sb**2 + N_[..., None] ** 2
        ) * wb  # (na, ng, nb)
        odd = (np.rint(M_ + N_).astype(int) % 2 == 1)[..., None, None]
        blocks = tau * np.where(odd, Ko, Ke)
        idx = np.arange(nb)
        blocks[..., idx, idx] += sigma * wb + tau * diag
        inv = np.linalg.inv(blocks)
        self._precond_cache[key] = inv
        return inv

    def solve_constant_coefficient(self, r, sigma, tau):
        """Solve ``(sigma W + tau L0) u = r`` exactly via FFT and small block solves."""
        inv = self._mode_blocks(sigma, tau)
        na, nb, ng = self.grid.shape
        R = self._reshape(r) * (na * ng)  # undo the uniform alpha/gamma weight factor
        Rh = np.fft.fft2(R, axes=(-3, -1))
        Rh = np.moveaxis(Rh, -2, -1)  # (..., na, ng, nb)
        Uh = np.einsum("agij,...agj->...agi", inv, Rh)
        Uh = np.moveaxis(Uh, -1, -2)
        U = np.real(np.fft.ifft2(Uh, axes=(-3, -1)))
        return U.reshape(U.shape[:-3] + (self.grid.size,))


def _batched_pcg(apply, b, prec, x0, tol, maxiter):
    """Conjugate gradients run independently on each row of ``b``."""
    x = x0.copy()
    r = b - apply(x)
    bn = np.linalg.norm(b, axis=-1)
    bn = np.where(bn > 0, bn, 1.0)
    z = prec(r)
    p = z.copy()
    rz = np.einsum("...i,...i->...", r, z)
    it = 0
    for it in range(1, maxiter + 1):
        done = np.linalg.norm(r, axis=-1) <= tol * bn
        if np.all(done):
            return x, it - 1
        Ap = apply(p)
        pAp = np.einsum("...i,...i->...", p, Ap)
        a = np.where(done, 0.0, rz / np.where(done, 1.0, pAp))
        x += a[..., None] * p
        r -= a[..., None] * Ap
        z = prec(r)
        rz_new = np.einsum("...i,...i->...", r, z)
        beta = np.where(done, 0.0, rz_new / np.where(rz == 0, 1.0, rz))
        p = z + beta[..., None] * p
        rz = rz_new
    if np.all(np.linalg.norm(r, axis=-1) <= tol * bn):
        return x, it
    raise SolverSingular(f"PCG did not reach tol={tol:g} in {maxiter} iterations")


def implicit_relaxation(ops: Operators, M, f_old, tau, g0=None, tol=1e-11, maxiter=2000):
    """Backward-Euler step ``f = f_old + tau * div(M grad(f / M))``.

    Solves the symmetric positive definite system
    ``(W M + tau K_M) g = W f_old`` for ``g = f / M`` by preconditioned CG,
    batched over leading axes.  ``tau`` already contains ``d dt / eps``.
    The result is shifted along ``M`` (the kernel) so mass matches ``f_old``
    to rounding regardless of the iteration tolerance.

    Returns ``(f_new, g, iterations)``.
    """
    grid = ops.grid
    M = np.asarray(M, dtype=float)
    f_old = np.asarray(f_old, dtype=float)
    w = grid.weights
    b = w * f_old
    M_b = np.broadcast_to(M, f_old.shape)

    def apply(g):
        return w * M_b * g + tau * ops.weighted_laplacian_form(g, M_b)

    def prec(r):
        return ops.solve_constant_coefficient(r, 1.0, tau)

    x0 = f_old / M_b if g0 is None else np.broadcast_to(g0, f_old.shape).copy()
    g, its = _batched_pcg(apply, b, prec, x0, tol, maxiter)
    mass_old = f_old @ w
    mass_new = (M_b * g) @ w
    g = g + ((mass_old - mass_new) / (M_b @ w))[..., None]
    return M_b * g, g, its


def poincare_constant(grid: EulerGrid, Lam, params, ops: Operators | None = None, dense_limit=3500, seed=0):
    """Spectral gap of the weighted Fokker-Planck form at concentration ``params.kappa``.

    Smallest nonzero ``lam`` with ``K g = lam W M g`` where ``K`` is the
    stiffness form ``sum_i X_i^T W M X_i``; the kernel is the constants.
    Dense generalized eigen-solve for small grids, LOBPCG with the constants
    as a hard constraint otherwise.
    """
    from scipy.linalg import eigh
    from scipy.sparse.linalg import LinearOperator, lobpcg

    from .so3 import dot_half

    ops = ops or Operators(grid)
    n = grid.size
    expo = params.kappa * dot_half(grid.rotations, np.asarray(Lam, dtype=float))
    M = np.exp(expo - expo.max())
    M = M / integrate(grid, M)
    mass = grid.weights * M
    if n <= dense_limit:
        K = ops.weighted_laplacian_form(np.eye(n), M)
        K = 0.5 * (K + K.T)
        s = 1.0 / np.sqrt(mass)
        vals = eigh(s[:, None] * K * s[None, :], eigvals_only=True, subset_by_index=[0, 2])
        lam2 = vals[1]
        if lam2 < 1e-10:
            raise DegenerateKernel(f"second eigenvalue {lam2:.3e} indicates a multi-dimensional kernel")
        return float(lam2)
    Kop = LinearOperator((n, n), matvec=lambda v: ops.weighted_laplacian_form(v.ravel(), M), dtype=float)
    Bop = LinearOperator((n, n), matvec=lambda v: mass * v.ravel(), dtype=float)
    Pop = LinearOperator((n, n), matvec=lambda v: ops.solve_constant_coefficient(v.ravel(), 1e-3, 1.0), dtype=float)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        vals, _ = lobpcg(Kop, X, B=Bop, M=Pop, Y=np.ones((n, 1)), tol=1e-8, maxiter=400, largest=False)
    vals = np.sort(vals)
    if vals[0] < 1e-10:
        raise DegenerateKernel(f"constrained eigenvalue {vals[0]:.3e} indicates a multi-dimensional kernel")
    return float(vals[0])


def export_matrix(path, matrix):
    """Write a dense float64 matrix as a row-major blob with a 16-byte header.

    Header: 8-byte magic ``b"SO3OPMAT"`` followed by ``N`` (uint64, little
    endian) for an ``N x N`` matrix, or raises for non-square input.
    """
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("only square operator matrices are exported")
    with open(path, "wb") as fh:
        fh.write(b"SO3OPMAT")
        fh.write(struct.pack("<Q", matrix.shape[0]))
        fh.write(matrix.tobytes())


def load_matrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != b"SO3OPMAT":
            raise ValueError("not an operator matrix blob")
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise ValueError("truncated operator matrix blob")
    return data.reshape(n, n).copy()
