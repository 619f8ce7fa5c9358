"""Von Mises-Fisher equilibria on SO(3) and their flux moments.

The density is ``M_Lam(A) = exp(kappa * dot_half(A, Lam)) / Z`` with
``kappa = nu0 / d``.  Because ``dot_half(A, Lam) = 1/2 + cos(theta)`` for the
angle ``theta`` of ``Lam^T A``, the normalizer reduces to a one-dimensional
integral against the Weyl density ``(2/pi) sin^2(theta/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad

from .errors import QuadratureMismatch
from .field import EulerGrid, integrate
from .so3 import dot_half, polar_decompose, tangent_projection

Z_AGREEMENT = 1e-6


@dataclass(frozen=True)
class VmfParams:
    """Constant intensity ``nu0`` and diffusion ``d``; ``sigma(mu) = nu0 mu``."""

    nu0: float
    d: float

    def __post_init__(self):
        if not (self.nu0 > 0 and np.isfinite(self.nu0)):
            raise ValueError(f"nu0 must be positive, got {self.nu0}")
        if not (self.d > 0 and np.isfinite(self.d)):
            raise ValueError(f"d must be positive, got {self.d}")

    @property
    def kappa(self):
        return self.nu0 / self.d

    @cached_property
    def Z(self):
        return weyl_normalizer(self.kappa)


def weyl_integral(func, kappa=0.0):
    """``(2/pi) int_0^pi func(theta) sin^2(theta/2) dtheta`` by adaptive quadrature."""
    val, _ = quad(lambda t: func(t) * np.sin(0.5 * t) ** 2, 0.0, np.pi, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2.0 / np.pi * val


def weyl_normalizer(kappa):
    return weyl_integral(lambda t: np.exp(kappa * (0.5 + np.cos(t))))


def vmf_normalizer(params: VmfParams, grid: EulerGrid | None = None):
    """Normalizer ``Z``; cross-checked against 3D quadrature when a grid is given."""
    z1 = params.Z
    if grid is not None:
        z3 = integrate(grid, np.exp(params.kappa * dot_half(grid.rotations, np.eye(3))))
        if abs(z3 - z1) > Z_AGREEMENT * z1:
            raise QuadratureMismatch(f"grid quadrature Z={z3:.12g} vs 1D Z={z1:.12g}; grid too coarse for kappa")
    return z1


def vmf_density(params: VmfParams, Lam, grid: EulerGrid):
    """Node values of ``M_Lam``; ``Lam`` may carry leading batch axes."""
    Lam = np.asarray(Lam, dtype=float)
    expo = dot_half(grid.rotations, Lam[..., None, :, :])
    return np.exp(params.kappa * expo) / params.Z


def flux_lambda(grid: EulerGrid, f):
    """First moment ``int f(A) A dA``; batched over leading axes of ``f``."""
    f = np.asarray(f, dtype=float)
    return np.einsum("...q,qij->...ij", f * grid.weights, grid.rotations)


def mean_attitude(grid: EulerGrid, f):
    return polar_decompose(flux_lambda(grid, f))


def attitude_derivatives(grid: EulerGrid, rho0, Lam0, f1, c1):
    """First and second derivatives of ``eps -> Lambda[rho0 M_Lam0 + eps f1]`` at 0.

    With ``a = c1 rho0``, ``L = lambda[f1]`` and ``S = L^T Lam0 + Lam0^T L``:
    first ``= P_T(L) / a`` and second
    ``= -L S / a^2 - Lam0 L^T L / a^2 + 3 Lam0 S^2 / (4 a^2)``, from the
    second-order expansion of ``(a Lam0 + eps L)((a Lam0 + eps L)^T(...))^{-1/2}``.
    """
    a = c1 * rho0
    Lam0 = np.asarray(Lam0, dtype=float)
    L = flux_lambda(grid, f1)
    Lt = np.swapaxes(L, -1, -2)
    S = Lt @ Lam0 + np.swapaxes(Lam0, -1, -2) @ L
    first = tangent_projection(Lam0, L) / a
    second = (-L @ S - Lam0 @ Lt @ L + 0.75 * Lam0 @ S @ S) / a**2
    return first, second


def attitude_derivatives_as_displayed(grid: EulerGrid, rho0, Lam0, f1, c1):
    """Second-derivative formula with coefficients -1/(2a^2), -1/a^3, 3/(4a^3).

    Kept for comparison only; it does not match finite differences.
    """
    a = c1 * rho0
    Lam0 = np.asarray(Lam0, dtype=float)
    L = flux_lambda(grid, f1)
    Lt = np.swapaxes(L, -1, -2)
    S = Lt @ Lam0 + np.swapaxes(Lam0, -1, -2) @ L
    return -L @ S / (2 * a**2) - Lt @ L / a**3 + 0.75 * S @ S / a**3
