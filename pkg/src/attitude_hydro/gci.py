"""One-dimensional coefficient machinery: weights, the psi0 boundary-value
problem, coefficients c1..c4, generalized collision invariants and the
stability margin.

Everything here is a function of the rotation angle ``theta`` of
``Lam0^T A``.  Averages ``<g>`` are normalized integrals over ``(0, pi)``
against ``weight(theta) sin^2(theta/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import DegenerateWeight, SolverSingular
from .field import EulerGrid, Operators, integrate, poincare_constant
from .so3 import dot_half, vee
from .vmf import VmfParams, flux_lambda, vmf_density

MARGIN_CONSTANT = 25.0 * 3.0**0.25
DEFAULT_THETA_NODES = 4096


@dataclass(frozen=True)
class ThetaGrid:
    """Gauss-Legendre rule for integrals over ``(0, pi)``."""

    theta: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss(cls, n=200):
        x, w = np.polynomial.legendre.leggauss(n)
        return cls(theta=0.5 * np.pi * (x + 1.0), weights=0.5 * np.pi * w)

    def average(self, g, weight):
        """``int g weight sin^2(t/2) / int weight sin^2(t/2)``."""
        s2 = np.sin(0.5 * self.theta) ** 2
        den = np.sum(self.weights * weight * s2)
        if abs(den) < 1e-12:
            raise DegenerateWeight(f"normalizing integral {den:.3e} is numerically zero")
        return np.sum(self.weights * g * weight * s2) / den


def weight_m(theta, params: VmfParams):
    return np.exp(params.kappa * (0.5 + np.cos(theta))) / params.Z


def weight_mtilde(theta, params: VmfParams, gci: "GciSolution"):
    """``nu0 sin^2(theta) m(theta) psi0(theta)`` under constant intensity."""
    return params.nu0 * np.sin(theta) ** 2 * weight_m(theta, params) * gci.psi(theta)


@dataclass
class GciSolution:
    """Finite-difference solution of the psi0 problem on ``theta_j = j pi / N``.

    ``u = sin(theta) psi0`` is stored at all nodes, including the Dirichlet
    ends; ``psi`` evaluates ``psi0`` anywhere in ``[0, pi]`` and ``psi_bar``
    evaluates it as a function of ``t = 1/2 + cos(theta)``.
    """

    params: VmfParams
    theta: np.ndarray
    u: np.ndarray
    residual: float
    sign: int
    _spline: CubicSpline = field(repr=False, default=None)

    def __post_init__(self):
        if self._spline is None:
            self._spline = CubicSpline(self.theta, self.u)

    @property
    def psi_nodes(self):
        return self.u[1:-1] / np.sin(self.theta[1:-1])

    def psi(self, theta):
        theta = np.asarray(theta, dtype=float)
        s = np.sin(theta)
        near = s < 1e-6
        val = self._spline(theta) / np.where(near, 1.0, s)
        # at the ends u vanishes linearly: psi = u'(t) / cos(t)
        lim = self._spline(theta, 1) / np.cos(theta)
        return np.where(near, lim, val)

    def psi_bar(self, t):
        t = np.clip(np.asarray(t, dtype=float), -0.5, 1.5)
        return self.psi(np.arccos(t - 0.5))


def _ode_coefficients(theta, params):
    m = weight_m(theta, params)
    s2 = np.sin(0.5 * theta) ** 2
    return m, s2


def solve_psi0(params: VmfParams, N=DEFAULT_THETA_NODES) -> GciSolution:
    """Solve ``(s2 m u')' - (m/2) u = s2 m sin(theta)`` with ``u(0) = u(pi) = 0``.

    This is the weighted self-adjoint form of the psi0 equation after
    multiplying by ``s2 = sin^2(theta/2)``; ``u = sin(theta) psi0``.
    Three-point flux differences give a symmetric negative definite
    tridiagonal system.
    """
    if N < 64:
        raise ValueError("solve_psi0 needs N >= 64")
    h = np.pi / N
    theta = np.arange(N + 1) * h
    mid = theta[:-1] + 0.5 * h
    m_mid, s2_mid = _ode_coefficients(mid, params)
    a = s2_mid * m_mid  # flux coefficient at half nodes
    ti = theta[1:-1]
    m_i, s2_i = _ode_coefficients(ti, params)
    diag = -(a[:-1] + a[1:]) / h**2 - 0.5 * m_i
    off = a[1:-1] / h**2
    rhs = s2_i * m_i * np.sin(ti)
    ab = np.zeros((3, N - 1))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    if np.min(np.abs(diag)) == 0 or not np.all(np.isfinite(ab)):
        raise SolverSingular("degenerate psi0 system")
    try:
        ui = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverSingular(str(exc)) from exc
    u = np.concatenate([[0.0], ui, [0.0]])
    # residual of the undivided equation on interior nodes, relative to the right side
    Au = diag * ui
    Au[1:] += off * ui[:-1]
    Au[:-1] += off * ui[1:]
    res = np.linalg.norm((Au - rhs) / s2_i) / np.linalg.norm(rhs / s2_i)
    if not np.all(np.isfinite(ui)):
        raise SolverSingular("psi0 solve produced non-finite values")
    psi = ui / np.sin(ti)
    sgn = int(np.sign(psi[np.argmax(np.abs(psi))]))
    return GciSolution(params=params, theta=theta, u=u, residual=float(res), sign=sgn)


def psi0_ode_residual(gci: GciSolution):
    """Relative residual of the divided (original) ODE using the stored u."""
    p = gci.params
    theta = gci.theta
    h = theta[1] - theta[0]
    u = gci.u
    mid = theta[:-1] + 0.5 * h
    m_mid, s2_mid = _ode_coefficients(mid, p)
    flux = s2_mid * m_mid * np.diff(u) / h
    ti = theta[1:-1]
    m_i, s2_i = _ode_coefficients(ti, p)
    lhs = np.diff(flux) / h / s2_i - m_i * np.sin(ti) / (2 * s2_i) * (u[1:-1] / np.sin(ti))
    rhs = np.sin(ti) * m_i
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))


def compute_c1(params: VmfParams, tgrid: ThetaGrid | None = None):
    tgrid = tgrid or ThetaGrid.gauss()
    t = tgrid.theta
    return (2.0 / 3.0) * tgrid.average(0.5 + np.cos(t), weight_m(t, params))


def compute_c2_c3_c4(params: VmfParams, gci: GciSolution, tgrid: ThetaGrid | None = None):
    tgrid = tgrid or ThetaGrid.gauss()
    t = tgrid.theta
    wt = weight_mtilde(t, params, gci)
    c2 = tgrid.average(2.0 + 3.0 * np.cos(t), wt) / 5.0
    c3 = params.d * tgrid.average(np.full_like(t, 1.0 / params.nu0), wt)
    c4 = tgrid.average(1.0 - np.cos(t), wt) / 5.0
    return float(c2), float(c3), float(c4)


# ----------------------------------------------------------------------------
# generalized collision invariants


def gci_construct(Lam0, P, gci: GciSolution, grid: EulerGrid):
    """``phi_P(A) = dot_half(P, Lam0^T A) psi_bar(dot_half(Lam0, A))`` on the nodes."""
    P = np.asarray(P, dtype=float)
    if np.abs(P + P.T).max() > 1e-12:
        raise ValueError("P must be antisymmetric")
    Lam0 = np.asarray(Lam0, dtype=float)
    A = grid.rotations
    return dot_half(P, Lam0.T @ A) * gci.psi_bar(dot_half(Lam0, A))


def project_tangent_constraint(grid: EulerGrid, Lam0, f):
    """Remove from ``f`` the part that makes ``P_T(lambda[f])`` nonzero.

    Subtracts ``6 sum_k v_k dot_half(Lam0 [e_k]x, A)`` with
    ``v = vee(Lam0^T lambda[f])``: these degree-one functions have
    ``Lam0^T lambda = [e_k]x / 6`` exactly under the grid quadrature.
    """
    from .so3 import cross_matrix

    Lam0 = np.asarray(Lam0, dtype=float)
    v = vee(Lam0.T @ flux_lambda(grid, f))
    basis = np.stack([dot_half(Lam0 @ cross_matrix(e), grid.rotations) for e in np.eye(3)])
    return f - 6.0 * v @ basis


@dataclass
class GciReport:
    max_constrained: float
    witness: float
    constant_max: float
    passed: bool


def gci_verify(grid: EulerGrid, Lam0, params: VmfParams, gci: GciSolution, rng=None,
               n_f=50, n_p=3, tol=1e-5, witness_tol=1e-3, ops: Operators | None = None) -> GciReport:
    """Relative orthogonality ``|int L f phi_P| / (|f| |phi_P|)`` over random data."""
    from .so3 import random_antisymmetric

    rng = rng or np.random.default_rng(0)
    ops = ops or Operators(grid)
    M = vmf_density(params, Lam0, grid)
    F = rng.standard_normal((n_f, grid.size)) * M
    Fc = project_tangent_constraint(grid, Lam0, F)
    LF = ops.fokker_planck(Fc, M, params.d)
    norm = lambda x: np.sqrt(integrate(grid, x * x))
    worst = 0.0
    phis = []
    for _ in range(n_p):
        phi = gci_construct(Lam0, random_antisymmetric(rng), gci, grid)
        phis.append(phi)
        rel = np.abs(integrate(grid, LF * phi)) / (norm(Fc) * norm(phi))
        worst = max(worst, float(rel.max()))
    const = float(np.abs(integrate(grid, LF)).max())
    f_free = F[0]
    Lf = ops.fokker_planck(f_free, M, params.d)
    witness = max(
        float(abs(integrate(grid, Lf * phi)) / (norm(f_free) * norm(phi))) for phi in phis
    )
    return GciReport(worst, witness, const, worst <= tol and witness > witness_tol and const <= 1e-12)


# ----------------------------------------------------------------------------
# stability margin and the coefficient table


def stability_margin(d, params: VmfParams, c1, lambda0):
    """``d - 25 * 3^(1/4) * nu0 / (c1 * lambda0)``; positive means the margin holds."""
    if c1 <= 0 or lambda0 <= 0:
        raise ValueError("c1 and lambda0 must be positive")
    return d - MARGIN_CONSTANT * params.nu0 / (c1 * lambda0)


def find_positive_margin(nu0, lambda0_of_kappa, kappas=(0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0)):
    """Search ``d = nu0 / kappa`` for a positive margin, refining by bisection.

    Returns ``(d, d_star)`` for the first sign change found, or ``None`` when
    the margin is negative at every scanned concentration.
    """

    def margin(kappa):
        p = VmfParams(nu0=nu0, d=nu0 / kappa)
        return stability_margin(p.d, p, compute_c1(p), lambda0_of_kappa(kappa))

    vals = [(k, margin(k)) for k in kappas]
    for (ka, ma), (kb, mb) in zip(vals, vals[1:]):
        if ma > 0 >= mb or mb > 0 >= ma:
            lo, hi = (ka, kb) if ma > 0 else (kb, ka)
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if margin(mid) > 0:
                    lo = mid
                else:
                    hi = mid
            return nu0 / lo, margin(lo)
    for k, m in vals:
        if m > 0:
            return nu0 / k, m
    return None


@dataclass(frozen=True)
class CoefficientSet:
    kappa: float
    Z: float
    c1: float
    c2: float
    c3: float
    c4: float
    lambda0: float
    d_star: float
    psi0_sign: int = -1

    @property
    def margin_positive(self):
        return self.d_star > 0


def compute_coefficients(params: VmfParams, grid: EulerGrid | None = None, n_theta=DEFAULT_THETA_NODES,
                         lambda0: float | None = None, gci: GciSolution | None = None) -> CoefficientSet:
    """Full coefficient table for ``params``; lambda0 is computed on ``grid`` unless given."""
    from .field import build_grid

    gci = gci or solve_psi0(params, n_theta)
    c1 = compute_c1(params)
    c2, c3, c4 = compute_c2_c3_c4(params, gci)
    if lambda0 is None:
        grid = grid or build_grid()
        lambda0 = poincare_constant(grid, np.eye(3), params)
    d_star = stability_margin(params.d, params, c1, lambda0)
    return CoefficientSet(params.kappa, params.Z, float(c1), c2, c3, c4, float(lambda0), float(d_star), gci.sign)


def transport_coefficients(params: VmfParams, n_theta=DEFAULT_THETA_NODES) -> CoefficientSet:
    """``c1..c4`` only; ``lambda0`` and ``d_star`` are left as NaN (no eigen-solve)."""
    gci = solve_psi0(params, n_theta)
    c2, c3, c4 = compute_c2_c3_c4(params, gci)
    nan = float("nan")
    return CoefficientSet(params.kappa, params.Z, float(compute_c1(params)), c2, c3, c4, nan, nan, gci.sign)
