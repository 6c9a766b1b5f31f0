"""Roots of the clamped-plate characteristic equation on a sector.

A field r^(1+z) * phi(theta) is biharmonic with clamped edges
phi(0) = phi'(0) = phi(omega) = phi'(omega) = 0 exactly when z is a root of
the 4x4 determinant of those boundary conditions on the solution basis
{cos((1+z)t), sin((1+z)t), cos((1-z)t), sin((1-z)t)} of

    phi'''' + 2(1+z^2) phi'' + (z^4 - 2z^2 + 1) phi = 0 .

That determinant is the ground truth here; it collapses in closed form to
4*(sin^2(z*omega) - z^2*sin^2(omega)), which is kept as an independent
cross-check (``closed_form_char``).  The naive determinant also vanishes
identically at z = 0 (doubly) and z = 1 (simply) because the trig basis
degenerates there; those zeros carry no eigenvalue and are removed by the
rescaled basis of ``char_det_degenerate``.

Root finding combines the argument principle (winding number of the deflated
determinant over a strip rectangle, Gauss-sampled contour) with power-sum
moments to localize candidates and Newton polishing to converge them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .geometry import _leggauss

__all__ = [
    "CharRoot",
    "OmegaThreshold",
    "RootCountMismatch",
    "char_det",
    "char_det_degenerate",
    "char_det_reduced",
    "closed_form_char",
    "compute_omega0",
    "find_roots",
]

DEGENERATE_SWITCH = 1e-3     # |z - 1| below which the rescaled basis is used
DOUBLE_ROOT_DERIV_TOL = 1e-7


class RootCountMismatch(RuntimeError):
    """Argument-principle count disagrees with the polished roots."""


@dataclass(frozen=True)
class CharRoot:
    """One root of the characteristic determinant.

    residual is |det M(z, omega)|; multiplicity 2 is only reported when the
    z-derivative of the determinant is simultaneously below tolerance.
    """

    z: complex
    multiplicity: int
    residual: float
    is_real: bool

    @property
    def strip_position(self) -> float:
        return self.z.real


@dataclass(frozen=True)
class OmegaThreshold:
    """Solution of tan(omega0) = omega0 in (pi, 3*pi/2)."""

    omega0: float
    residual: float

    @property
    def degrees(self) -> float:
        return math.degrees(self.omega0)


# ---------------------------------------------------------------------------
# Determinants
# ---------------------------------------------------------------------------


def _sin_over(q, theta):
    """sin(q*theta)/q, stable through q = 0 (limit theta)."""
    q = np.asarray(q, dtype=complex)
    theta = float(theta)
    small = np.abs(q * theta) < 1e-4
    out = np.empty_like(q)
    qs = np.where(small, 1.0, q)  # avoid 0/0 in the generic branch
    out[...] = np.sin(qs * theta) / qs
    x = q[small] * theta
    out[small] = theta * (1.0 - x**2 / 6.0 + x**4 / 120.0)
    return out


def _clamped_matrix(z, omega, rescale_fourth=False):
    """Stacked boundary-condition matrices, shape z.shape + (4, 4).

    Rows: value at 0, derivative at 0, value at omega, derivative at omega.
    Columns: cos(p t), sin(p t), cos(q t), sin(q t) with p = 1+z, q = 1-z.
    With ``rescale_fourth`` the last column is sin(q t)/q (limit t at z = 1),
    which divides the determinant by q and removes the spurious zero there.
    """
    z = np.asarray(z, dtype=complex)
    p = 1.0 + z
    q = 1.0 - z
    w = float(omega)
    zero = np.zeros_like(z)
    one = np.ones_like(z)
    if rescale_fourth:
        s_w = _sin_over(q, w)
        s0_d = np.ones_like(z)              # d/dt sin(qt)/q = cos(qt)
        sw_d = np.cos(q * w)
        s0 = zero
    else:
        s_w = np.sin(q * w)
        s0_d = q
        sw_d = q * np.cos(q * w)
        s0 = zero
    rows = [
        [one, zero, one, s0],
        [zero, p, zero, s0_d],
        [np.cos(p * w), np.sin(p * w), np.cos(q * w), s_w],
        [-p * np.sin(p * w), p * np.cos(p * w), -q * np.sin(q * w), sw_d],
    ]
    mat = np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)
    return mat


def char_det(z, omega):
    """Determinant of the clamped 4x4 system in the generic trig basis.

    Vanishes exactly at the singular exponents, plus spuriously at z = 0
    (double) and z = 1 (simple) where the basis degenerates; near z = 1 use
    ``char_det_degenerate``.
    """
    scalar = np.isscalar(z)
    det = np.linalg.det(_clamped_matrix(np.atleast_1d(z), omega))
    return complex(det[0]) if scalar else det


def char_det_degenerate(z, omega):
    """Determinant in the z = 1 rescaled basis: equals char_det/(1 - z).

    Analytic across z = 1; on the overlap annulus the two branches agree to
    roundoff after that rescaling.
    """
    scalar = np.isscalar(z)
    det = np.linalg.det(_clamped_matrix(np.atleast_1d(z), omega, rescale_fourth=True))
    return complex(det[0]) if scalar else det


def char_det_reduced(z, omega, switch=DEGENERATE_SWITCH):
    """char_det/(1 - z) with automatic routing through the degenerate basis.

    This is the function actually searched for roots: entire in z, same zero
    set as the determinant apart from the spurious z = 1 factor.
    """
    scalar = np.isscalar(z)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty_like(z)
    near = np.abs(z - 1.0) < switch
    if np.any(~near):
        out[~near] = char_det(z[~near], omega) / (1.0 - z[~near])
    if np.any(near):
        out[near] = char_det_degenerate(z[near], omega)
    return complex(out[0]) if scalar else out


def closed_form_char(z, omega):
    """sin^2(z*omega) - z^2*sin^2(omega); cross-check for the determinant.

    The determinant equals exactly 4x this expression.  (With sin(omega) to
    the first power instead, no real roots would exist for omega > pi at all,
    so the squared form is the one consistent with the 4x4 system.)
    """
    z = np.asarray(z, dtype=complex) if not np.isscalar(z) else complex(z)
    return np.sin(z * omega) ** 2 - z**2 * math.sin(omega) ** 2


# ---------------------------------------------------------------------------
# The threshold angle tan(omega0) = omega0
# ---------------------------------------------------------------------------


def compute_omega0(tol: float = 1e-12) -> OmegaThreshold:
    """Root of tan(omega) = omega in (pi, 3*pi/2) by bracketing plus Newton."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    # sin - w*cos has the same root and no pole on the bracket
    w = brentq(lambda t: math.sin(t) - t * math.cos(t), math.pi + 1e-9, 1.5 * math.pi - 1e-9, xtol=1e-14)
    for _ in range(4):
        g = math.tan(w) - w
        w -= g / (math.tan(w) ** 2)
    residual = abs(math.tan(w) - w)
    if residual >= tol:
        raise RuntimeError(f"omega0 iteration stalled at residual {residual:.3e}")
    return OmegaThreshold(omega0=w, residual=residual)


# ---------------------------------------------------------------------------
# Argument-principle root finding
# ---------------------------------------------------------------------------


def _fd_derivative(f, z, h=1e-7):
    step = h * (1.0 + abs(z))
    return (f(z + step) - f(z - step)) / (2.0 * step)


def _contour_nodes(rect, n_per_side):
    a, b, c, d = rect
    x, w = _leggauss(n_per_side)
    corners = [(a + 1j * c, b + 1j * c), (b + 1j * c, b + 1j * d),
               (b + 1j * d, a + 1j * d), (a + 1j * d, a + 1j * c)]
    zs, ws = [], []
    for z0, z1 in corners:
        half = 0.5 * (z1 - z0)
        zs.append(z0 + half * (x + 1.0))
        ws.append(half * w)
    return np.concatenate(zs), np.concatenate(ws)


def _moments(omega, rect, n_per_side, n_max):
    """Contour integrals (1/2pi i) \\oint z^k G'/G dz for k = 0..n_max."""
    z, w = _contour_nodes(rect, n_per_side)
    g = char_det_reduced(z, omega)
    # |G| grows like exp(2*omega*|Im z|) along the vertical sides, so root
    # proximity shows up as a sharp local dip, not as a small global value.
    absg = np.abs(g).reshape(4, n_per_side)
    for side in absg:
        local_max = np.maximum(np.roll(side, 3), np.roll(side, -3))
        if np.any(side < 1e-6 * local_max):
            raise _ContourNearRoot()
    h = 1e-7 * (1.0 + np.abs(z))
    gp = (char_det_reduced(z + h, omega) - char_det_reduced(z - h, omega)) / (2.0 * h)
    integrand = gp / g
    moments = [np.sum(w * integrand * z**k) / (2j * math.pi) for k in range(n_max + 1)]
    return np.array(moments)


class _ContourNearRoot(Exception):
    pass


def _poly_from_power_sums(s):
    """Monic polynomial whose roots have power sums s[1..N], via Newton identities."""
    n = len(s) - 1
    e = np.zeros(n + 1, dtype=complex)
    e[0] = 1.0
    for k in range(1, n + 1):
        acc = 0.0
        for i in range(1, k + 1):
            acc += (-1) ** (i - 1) * e[k - i] * s[i]
        e[k] = acc / k
    coeffs = [(-1) ** k * e[k] for k in range(n + 1)]
    return np.array(coeffs)


def _newton_polish(omega, z0, multiplicity=1, max_iter=80):
    """Multiplicity-aware Newton on the reduced determinant.

    Returns (z, converged, quadratic) where ``quadratic`` reports that the
    final two corrections shrank by at least a factor of ten.
    """
    f = lambda t: char_det_reduced(t, omega)
    z = complex(z0)
    corrections = []
    for _ in range(max_iter):
        fz = f(z)
        fpz = _fd_derivative(f, z)
        if fpz == 0:
            break
        step = multiplicity * fz / fpz
        z -= step
        corrections.append(abs(step))
        if corrections[-1] <= 1e-13 * (1.0 + abs(z)):
            break
    converged = bool(corrections) and corrections[-1] <= 1e-11 * (1.0 + abs(z))
    quadratic = converged and (
        len(corrections) < 2
        or corrections[-1] <= 0.1 * corrections[-2]
        or corrections[-1] <= 1e-13 * (1.0 + abs(z))
    )
    return z, converged, quadratic


def find_roots(
    omega: float,
    strip: tuple[float, float] = (0.01, 0.9999),
    tol: float = 1e-10,
    seed: int = 0,
    n_per_side: int = 512,
    max_im: float = 16.0,
) -> list[CharRoot]:
    """All characteristic roots with Re z in ``strip``, multiplicities included.

    The count is certified by the argument principle on the strip rectangle
    (imaginary extent doubled until stable); candidates come from the contour
    power sums and are Newton-polished on the determinant.  A contour passing
    too near a root is shifted and retried (up to 5 times).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = float(strip[0]), float(strip[1])
    if not 0.0 <= lo < hi <= 2.0:
        raise ValueError("strip must lie inside (0, 2)")
    rng = np.random.default_rng(seed)

    def count_and_moments(rect, n_max):
        n = n_per_side
        while n <= 8 * n_per_side:
            s = _moments(omega, rect, n, n_max)
            wind = s[0].real
            if abs(wind - round(wind)) < 1e-3 and abs(s[0].imag) < 1e-3:
                return int(round(wind)), s
            n *= 2
        # a winding that refuses to become integer means a root sits on or
        # very near the contour: let the caller shift the rectangle
        raise _ContourNearRoot()

    # Stabilize the count while enlarging the imaginary extent.
    for attempt in range(5):
        a = lo + (rng.uniform(-5e-4, 5e-4) if attempt else 0.0)
        b = hi + (rng.uniform(-5e-4, 5e-4) if attempt else 0.0)
        a, b = max(a, 1e-6), min(b, 2.0 - 1e-6)
        try:
            im = 1.0
            count, _ = count_and_moments((a, b, -im, im), 0)
            while im < max_im:
                count2, _ = count_and_moments((a, b, -2 * im, 2 * im), 0)
                if count2 == count:
                    break
                count, im = count2, 2 * im
            rect = (a, b, -2 * im, 2 * im)
            if count == 0:
                return []
            _, s = count_and_moments(rect, count)
            break
        except _ContourNearRoot:
            continue
    else:
        raise RootCountMismatch("contour passes near a root after 5 shifts")

    candidates = np.roots(_poly_from_power_sums(s))

    polished: list[tuple[complex, int, bool]] = []
    used = np.zeros(len(candidates), dtype=bool)
    for i, z0 in enumerate(candidates):
        if used[i]:
            continue
        partners = [j for j in range(len(candidates))
                    if j != i and not used[j] and abs(candidates[j] - z0) < 1e-3]
        z, conv, quad = _newton_polish(omega, z0)
        deriv = abs(_fd_derivative(lambda t: char_det_reduced(t, omega), z))
        if partners and deriv < DOUBLE_ROOT_DERIV_TOL:
            z2, conv, quad = _newton_polish(omega, 0.5 * (z0 + candidates[partners[0]]), multiplicity=2)
            polished.append((z2, 2, quad))
            used[i] = used[partners[0]] = True
        else:
            polished.append((z, 1, quad))
            used[i] = True

    # merge polish duplicates
    merged: list[tuple[complex, int, bool]] = []
    for z, m, quad in polished:
        for k, (zk, mk, qk) in enumerate(merged):
            if abs(z - zk) < 1e-6:
                merged[k] = (zk, mk + m, qk and quad)
                break
        else:
            merged.append((z, m, quad))

    roots = []
    for z, m, quad in merged:
        if abs(z.imag) < 1e-9:
            z = complex(z.real, 0.0)
        residual = abs(char_det(z, omega))
        if residual >= tol:
            raise RootCountMismatch(
                f"polished root {z} has residual {residual:.3e} >= tol {tol:.3e}")
        if not quad:
            raise RootCountMismatch(f"Newton did not converge quadratically at {z}")
        roots.append(CharRoot(z=z, multiplicity=m, residual=residual,
                              is_real=(z.imag == 0.0)))

    total = sum(r.multiplicity for r in roots)
    if total != count:
        raise RootCountMismatch(
            f"argument principle counts {count} roots, polishing found {total}")
    roots.sort(key=lambda r: (r.z.real, r.z.imag))
    return roots
