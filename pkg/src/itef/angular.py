"""Clamped angular profiles and the dual singular field of the sector.

For a characteristic root z the profile phi spans the nullspace of the 4x4
clamped boundary system on the trig solution basis of

    phi'''' + 2(1+z^2) phi'' + (z^2-1)^2 phi = 0 ,

normalized to ||phi||_L2(0,omega) = 1 with the sign fixed by phi''(0) > 0 so
that extracted singular coefficients are reproducible run to run.  The ODE is
even in z, so the same profile also rides the dual exponent: eta1 =
r^(1-z1) phi1(theta) is exactly biharmonic on the open cone and pairs with
biharmonic sources to expose the coefficient of the r^(1+z1) singularity; the
pairing constant is

    gamma = 4 z1 (z1^2 - 1) ||phi1||^2 - 4 z1 ||phi1'||^2  < 0 .

Associated (Jordan-chain) profiles for double roots are computed by Chebyshev
collocation of the forced ODE; the forcing is solvable only when the pairing
constant vanishes, which the solver reports as inconsistent otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .charroots import CharRoot, char_det, compute_omega0
from .geometry import SectorDomain, _leggauss

__all__ = [
    "AngularProfile",
    "AssociatedProfile",
    "DualSingular",
    "eta1",
    "extraction_constant",
    "solve_associated",
    "solve_profile",
]

_NORM_QUAD = 512


def _basis_block(z: complex, omega: float, theta, rescale_fourth: bool):
    """Values of the four ODE basis functions and derivatives to order 4.

    Returns array of shape (5, 4, len(theta)).  In rescaled mode the fourth
    function is sin((1-z)theta)/(1-z), whose limit at z = 1 is theta.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = 1.0 + z
    q = 1.0 - z
    out = np.zeros((5, 4, theta.size), dtype=complex)
    for k in range(5):
        shift = 0.5 * math.pi * k
        out[k, 0] = p**k * np.cos(p * theta + shift)
        out[k, 1] = p**k * np.sin(p * theta + shift)
        out[k, 2] = q**k * np.cos(q * theta + shift)
        if rescale_fourth:
            if k == 0:
                if abs(q) < 1e-8:
                    out[0, 3] = theta
                else:
                    out[0, 3] = np.sin(q * theta) / q
            else:
                out[k, 3] = q ** (k - 1) * np.sin(q * theta + shift)
        else:
            out[k, 3] = q**k * np.sin(q * theta + shift)
    return out


@dataclass(frozen=True)
class AngularProfile:
    """Unit-L2 angular eigenfunction of the clamped system at a simple root."""

    root: CharRoot
    omega: float
    coefficients: np.ndarray
    rescaled_basis: bool
    theta_grid: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    norm_l2: float
    dnorm_l2: float

    @property
    def z(self) -> float:
        return self.root.z.real

    def eval(self, theta, deriv: int = 0):
        """phi^(deriv)(theta) for deriv <= 4, real part of the trig combination."""
        block = _basis_block(self.root.z, self.omega, theta, self.rescaled_basis)
        vals = np.tensordot(self.coefficients, block[deriv], axes=(0, 0))
        return vals.real if np.isrealobj(self.coefficients) else vals

    def ode_residual(self, theta):
        z = self.root.z
        return (
            self.eval(theta, 4)
            + 2.0 * (1.0 + z**2).real * self.eval(theta, 2)
            + ((z**2 - 1.0) ** 2).real * self.eval(theta, 0)
        )


def _nullspace(z: complex, omega: float, rescale_fourth: bool):
    from .charroots import _clamped_matrix

    mat = _clamped_matrix(np.atleast_1d(z), omega, rescale_fourth=rescale_fourth)[0]
    u, s, vh = np.linalg.svd(mat)
    if s.size > 1 and s[-2] < 1e-8 * max(s[0], 1.0):
        raise ValueError("nullspace dimension != 1: smallest two singular values both vanish")
    return np.conj(vh[-1]), s


def solve_profile(root: CharRoot, omega: float, n_theta: int = 256) -> AngularProfile:
    """Angular profile at a simple root: nullspace vector, normalized and clamped.

    The profile and its derivatives are analytic trig combinations; samples on
    an n_theta-point Gauss grid are kept alongside for quadrature use.
    """
    if root.multiplicity != 1:
        raise ValueError("solve_profile requires a simple root; see solve_associated")
    return _profile_any(root, omega, n_theta)


def _profile_any(root: CharRoot, omega: float, n_theta: int = 256) -> AngularProfile:
    # nullspace profile regardless of algebraic multiplicity (the geometric
    # nullspace of the clamped system is one-dimensional either way)
    if abs(char_det(root.z, omega)) > 1e-8:
        raise ValueError("root does not satisfy the characteristic equation at this omega")

    z = root.z
    rescaled = abs(z - 1.0) < 1e-3
    coeff, _ = _nullspace(z, omega, rescaled)
    if root.is_real:
        # real root: the nullspace vector can be chosen real
        j = np.argmax(np.abs(coeff))
        coeff = (coeff / (coeff[j] / abs(coeff[j]))).real.astype(float)

    x, w = _leggauss(_NORM_QUAD)
    tq = 0.5 * omega * (x + 1.0)
    wq = 0.5 * omega * w
    block = _basis_block(z, omega, tq, rescaled)

    def combo(k, c):
        return np.tensordot(c, block[k], axes=(0, 0))

    norm = math.sqrt(float(np.real(wq @ np.abs(combo(0, coeff)) ** 2)))
    coeff = coeff / norm

    # sign convention: phi''(0) > 0; fall back to phi'''(0) > 0 when it vanishes
    d2 = combo(2, coeff)
    d2_at_0 = np.tensordot(coeff, _basis_block(z, omega, [0.0], rescaled)[2], axes=(0, 0))[0]
    scale2 = float(np.max(np.abs(d2)))
    if abs(d2_at_0) > 1e-8 * scale2:
        pivot = d2_at_0
    else:
        pivot = np.tensordot(coeff, _basis_block(z, omega, [0.0], rescaled)[3], axes=(0, 0))[0]
    if np.isrealobj(coeff):
        if pivot.real < 0:
            coeff = -coeff
    else:
        coeff = coeff * (abs(pivot) / pivot)

    xg, wg = _leggauss(n_theta)
    grid = 0.5 * omega * (xg + 1.0)
    gblock = _basis_block(z, omega, grid, rescaled)
    phi = np.tensordot(coeff, gblock[0], axes=(0, 0))
    dphi = np.tensordot(coeff, gblock[1], axes=(0, 0))
    d2phi = np.tensordot(coeff, gblock[2], axes=(0, 0))
    if np.isrealobj(coeff):
        phi, dphi, d2phi = phi.real, dphi.real, d2phi.real

    dnorm = math.sqrt(float(np.real(wq @ np.abs(combo(1, coeff)) ** 2)))
    return AngularProfile(
        root=root,
        omega=omega,
        coefficients=coeff,
        rescaled_basis=rescaled,
        theta_grid=grid,
        phi=phi,
        dphi=dphi,
        d2phi=d2phi,
        norm_l2=1.0,
        dnorm_l2=dnorm,
    )


# ---------------------------------------------------------------------------
# Associated profiles (Jordan chains at double roots)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssociatedProfile:
    """Solution of the forced clamped ODE attached to a double root.

    The stored coefficients are a Chebyshev series on [0, omega], unit L2
    norm; the ODE it satisfies is L phi_hat = forcing_scale * rhs(phi), where
    rhs is the Jordan-chain forcing of the partner profile.
    """

    root: CharRoot
    omega: float
    partner: AngularProfile
    coefficients: np.ndarray
    forcing_scale: float

    def eval(self, theta, deriv: int = 0):
        c = self.coefficients
        for _ in range(deriv):
            c = cheb.chebder(c) * (2.0 / self.omega)
        x = 2.0 * np.asarray(theta, dtype=float) / self.omega - 1.0
        return cheb.chebval(x, c)


def _clamped_cheb_basis(n_coef: int):
    """Chebyshev series of (1 - x^2)^2 * T_k, k = 0..n_coef-1.

    Built-in double zeros at both ends keep the collocation matrix of the
    4th-order operator at O(k^4) conditioning instead of O(k^8).
    """
    quartic = cheb.poly2cheb([1.0, 0.0, -2.0, 0.0, 1.0])  # (1-x^2)^2
    cols = []
    for k in range(n_coef):
        unit = np.zeros(k + 1)
        unit[k] = 1.0
        cols.append(cheb.chebmul(quartic, unit))
    width = max(c.size for c in cols)
    return np.array([np.pad(c, (0, width - c.size)) for c in cols])


def solve_clamped_ode(z: float, omega: float, rhs, orthogonal_to=None,
                      n_coef: int = 64, rel_tol: float = 1e-6):
    """Spectral collocation solve of L u = rhs with clamped ends on (0, omega).

    The trial space is (1-x^2)^2 * T_k (clamped by construction); ``rhs`` is a
    callable of theta.  When ``orthogonal_to`` (a profile) is given, the
    one-dimensional homogeneous ambiguity along it is removed by an exact
    L2-orthogonality constraint.  Raises if the constrained system is
    rank-deficient beyond expectation or the least-squares residual says the
    forcing is not in the range of the operator.

    Returns the plain Chebyshev series of u on [0, omega].
    """
    basis = _clamped_cheb_basis(n_coef)
    scale = 2.0 / omega
    n_colloc = n_coef + 16
    x = np.cos(math.pi * (np.arange(n_colloc) + 0.5) / n_colloc)
    theta = 0.5 * omega * (x + 1.0)

    def deriv_rows(m):
        rows = []
        for c in basis:
            dc = c
            for _ in range(m):
                dc = cheb.chebder(dc) * scale
            rows.append(cheb.chebval(x, dc))
        return np.array(rows).T

    lop = deriv_rows(4) + 2.0 * (1.0 + z**2) * deriv_rows(2) + (z**2 - 1.0) ** 2 * deriv_rows(0)

    if orthogonal_to is not None:
        xq, wq0 = _leggauss(_NORM_QUAD)
        tq = 0.5 * omega * (xq + 1.0)
        wq = 0.5 * omega * wq0
        vals = np.array([cheb.chebval(2.0 * tq / omega - 1.0, c) for c in basis])
        row = vals @ (wq * orthogonal_to.eval(tq, 0))
        _, _, vh = np.linalg.svd(row[None, :])
        Z = vh[1:].T.conj()
        expected_def = 0
    else:
        Z = np.eye(n_coef)
        expected_def = 1

    A = lop @ Z
    g = np.asarray(rhs(theta), dtype=float)
    sA = np.linalg.svd(A, compute_uv=False)
    rank_def = A.shape[1] - int(np.sum(sA > 1e-10 * sA[0]))
    if rank_def > expected_def:
        raise ValueError("inconsistent forcing: collocation system rank-deficient "
                         f"by {rank_def} (expected at most {expected_def})")
    y, *_ = np.linalg.lstsq(A, g, rcond=1e-12)
    resid = np.linalg.norm(A @ y - g)
    gnorm = np.linalg.norm(g)
    if gnorm > 0 and resid > rel_tol * gnorm:
        raise ValueError(
            f"inconsistent forcing: relative collocation residual {resid / gnorm:.3e}")
    coeffs_in_basis = Z @ y
    out = np.zeros(basis.shape[1])
    for a, c in zip(coeffs_in_basis, basis):
        out += a * c
    return out


def solve_associated(root: CharRoot, phi: AngularProfile, omega: float,
                     n_coef: int = 96) -> AssociatedProfile:
    """Associated profile at a double root, clamped, L2-orthogonal to phi.

    The forcing is the z-derivative of the ODE operator applied to phi:
    -4 z phi'' - 4 (z^3 - z) phi, which is solvable precisely when the
    pairing constant of phi vanishes (the Jordan-chain condition).
    """
    if root.multiplicity != 2:
        raise ValueError("solve_associated requires a double root")
    z = root.z.real

    def rhs(theta):
        return -4.0 * z * phi.eval(theta, 2) - 4.0 * (z**3 - z) * phi.eval(theta, 0)

    coeffs = solve_clamped_ode(z, omega, rhs, orthogonal_to=phi, n_coef=n_coef)

    x, w = _leggauss(_NORM_QUAD)
    tq = 0.5 * omega * (x + 1.0)
    wq = 0.5 * omega * w
    vals = cheb.chebval(2.0 * tq / omega - 1.0, coeffs)
    norm = math.sqrt(float(wq @ vals**2))
    if norm == 0.0:
        raise ValueError("inconsistent forcing: associated profile vanished")
    return AssociatedProfile(
        root=root,
        omega=omega,
        partner=phi,
        coefficients=coeffs / norm,
        forcing_scale=1.0 / norm,
    )


# ---------------------------------------------------------------------------
# Dual singular field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualSingular:
    """eta1 = r^(1-z1) phi1(theta): biharmonic on the open cone, clamped edges."""

    domain: SectorDomain
    z1: float
    profile: AngularProfile

    @property
    def exponent(self) -> float:
        return 1.0 - self.z1

    def radial(self, r, j: int = 0):
        """j-th radial derivative of r^(1-z1) (falling-factorial power law)."""
        s = self.exponent
        coef = 1.0
        for i in range(j):
            coef *= s - i
        r = np.asarray(r, dtype=float)
        return coef * r ** (s - j)

    def deriv(self, r, theta, j: int = 0, k: int = 0):
        """Tensor samples of d_r^j d_theta^k eta1 on r x theta grids."""
        return np.outer(self.radial(r, j), self.profile.eval(theta, k))

    def value(self, r, theta):
        return self.deriv(r, theta, 0, 0)

    def laplacian(self, r, theta):
        s = self.exponent
        r = np.asarray(r, dtype=float)
        ang = s**2 * self.profile.eval(theta, 0) + self.profile.eval(theta, 2)
        return np.outer(r ** (s - 2.0), ang)

    def bilaplacian(self, r, theta):
        """Exact radial power times the ODE residual of phi1 (zero to roundoff)."""
        r = np.asarray(r, dtype=float)
        return np.outer(r ** (self.exponent - 4.0), self.profile.ode_residual(theta))


def eta1(domain: SectorDomain, z1: CharRoot, phi1: AngularProfile) -> DualSingular:
    """Dual singular field for the smallest simple root on a re-entrant sector."""
    if not (z1.is_real and z1.multiplicity == 1 and 0.0 < z1.z.real < 1.0):
        raise ValueError("eta1 needs a real simple root in (0, 1)")
    omega0 = compute_omega0().omega0
    if not (omega0 < domain.omega < 2.0 * math.pi):
        raise ValueError("eta1 is defined for opening angles in (omega0, 2*pi)")
    return DualSingular(domain=domain, z1=z1.z.real, profile=phi1)


def extraction_constant(z1: float, phi1: AngularProfile) -> float:
    """Pairing constant gamma relating (f, zeta1) to the singular coefficient.

    gamma = 4 z1 (z1^2 - 1) ||phi1||^2 - 4 z1 ||phi1'||^2; strictly negative
    for z1 in (0, 1), which is what makes the extraction well posed.
    """
    z = float(z1)
    return 4.0 * z * (z**2 - 1.0) * phi1.norm_l2**2 - 4.0 * z * phi1.dnorm_l2**2
