"""Sector geometry, radial cutoff and polar quadrature.

The computational domain is a "pac-man" sector with vertex at the origin,
straight edges at theta = 0 and theta = omega, closed by a circular arc at
r = R.  Everything else in the package consumes the immutable objects built
here: the validated :class:`SectorDomain`, the C^4-smooth radial cutoff
:class:`Cutoff`, and tensor-product polar quadrature rules graded toward the
vertex (integrands behave like r^(2z-1) with z in (0,1), so plain Gauss rules
lose digits there).

Weighted norms follow the polar characterization

    ||u||^2  =  sum_{j+k <= ell}  || r^(beta-ell+j) d_r^j d_theta^k u ||_L2^2 .
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Cutoff",
    "SectorDomain",
    "PolarQuadrature",
    "make_sector",
    "cutoff_eval",
    "polar_quadrature",
    "radial_rule",
    "weighted_norm",
]


# ---------------------------------------------------------------------------
# Taylor jets of order 4: tiny arithmetic used to differentiate the cutoff
# blend exactly.  A jet is an array [f, f', f'', f''', f''''] (broadcastable).
# ---------------------------------------------------------------------------

_BINOM = np.array(
    [
        [1, 0, 0, 0, 0],
        [1, 1, 0, 0, 0],
        [1, 2, 1, 0, 0],
        [1, 3, 3, 1, 0],
        [1, 4, 6, 4, 1],
    ],
    dtype=float,
)


def _jet_mul(a, b):
    out = np.zeros_like(a)
    for k in range(5):
        for i in range(k + 1):
            out[k] += _BINOM[k, i] * a[i] * b[k - i]
    return out


def _jet_recip(a):
    # Leibniz applied to f*g = 1 solves for g = 1/f derivative by derivative.
    out = np.zeros_like(a)
    out[0] = 1.0 / a[0]
    for k in range(1, 5):
        acc = np.zeros_like(a[0])
        for i in range(1, k + 1):
            acc += _BINOM[k, i] * a[i] * out[k - i]
        out[k] = -acc * out[0]
    return out


def _jet_exp(a):
    # g = exp(f):  g^(k+1) = sum_i C(k,i) f^(i+1) g^(k-i)
    out = np.zeros_like(a)
    out[0] = np.exp(a[0])
    for k in range(4):
        acc = np.zeros_like(a[0])
        for i in range(k + 1):
            acc += _BINOM[k, i] * a[i + 1] * out[k - i]
        out[k + 1] = acc
    return out


def _blend_jet(y):
    """Jet of H(y) = g(y) / (g(y) + g(1-y)) with g(t) = exp(-1/t), y in (0,1)."""
    y = np.asarray(y, dtype=float)
    jy = np.zeros((5,) + y.shape)
    jy[0] = y
    jy[1] = 1.0
    j1my = np.zeros_like(jy)
    j1my[0] = 1.0 - y
    j1my[1] = -1.0

    def g(j):
        return _jet_exp(-_jet_recip(j))

    gy = g(jy)
    g1my = g(j1my)
    return _jet_mul(gy, _jet_recip(gy + g1my))


# ---------------------------------------------------------------------------
# Cutoff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """Radial cutoff: identically 1 on [0, plateau], identically 0 on [support, inf).

    The blend on (plateau, support) is the smoothstep-of-exponential
    H(y) = g(y)/(g(y)+g(1-y)), g(t) = exp(-1/t); it is C-infinity, but only
    four continuous derivatives are guaranteed/used downstream.
    """

    plateau: float
    support: float
    smooth_order: int = 4

    def __post_init__(self):
        if not 0.0 < self.plateau < self.support:
            raise ValueError("cutoff needs 0 < plateau < support")

    def jet(self, r):
        """Values and first four derivatives of chi at radii ``r``, shape (5, ...).

        Plateau and support values are literal 0.0 / 1.0, never approximations.
        """
        r = np.asarray(r, dtype=float)
        out = np.zeros((5,) + r.shape)
        out[0] = np.where(r <= self.plateau, 1.0, 0.0)
        band = (r > self.plateau) & (r < self.support)
        if np.any(band):
            width = self.support - self.plateau
            y = (self.support - r[band]) / width
            # guard the exp(-1/y) under/overflow right at the band edges
            y = np.clip(y, 1e-8, 1.0 - 1e-8)
            jet = _blend_jet(y)
            scale = -1.0 / width  # dy/dr
            for k in range(5):
                out[k][band] = jet[k] * scale**k
        return out


def cutoff_eval(c: Cutoff, r, deriv_order: int = 0):
    """Evaluate chi^(k)(r) for k = deriv_order <= 4."""
    if not 0 <= deriv_order <= 4:
        raise ValueError("deriv_order must be in 0..4")
    scalar = np.isscalar(r)
    out = c.jet(np.atleast_1d(np.asarray(r, dtype=float)))[deriv_order]
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectorDomain:
    """Sector of opening angle omega (radians) and radius R, vertex at origin.

    cutoff_inner = r0/2 and cutoff_outer = 2*r0 delimit the cutoff blend; the
    invariant 0 < cutoff_inner < cutoff_outer < radius is enforced at
    construction.  Instances are immutable and safe to share across workers.
    """

    omega: float
    radius: float
    r0: float
    cutoff_inner: float
    cutoff_outer: float

    @property
    def area(self) -> float:
        return 0.5 * self.omega * self.radius**2

    @property
    def cutoff(self) -> Cutoff:
        return Cutoff(self.cutoff_inner, self.cutoff_outer)

    def key(self) -> str:
        return f"omega={self.omega:.17g};R={self.radius:.17g};r0={self.r0:.17g}"


def make_sector(omega: float, radius: float, r0: float) -> SectorDomain:
    """Validated sector domain; rejects degenerate angles and bad cutoff radii."""
    omega = float(omega)
    for bad in (0.0, math.pi, 2.0 * math.pi):
        if abs(omega - bad) < 1e-12:
            raise ValueError(f"degenerate angle omega={omega!r}")
    if not 0.0 < omega < 2.0 * math.pi:
        raise ValueError("omega must lie in (0, 2*pi) \\ {pi}")
    if radius <= 0.0 or r0 <= 0.0:
        raise ValueError("radius and r0 must be positive")
    if 2.0 * r0 >= radius:
        raise ValueError("cutoff support too large: need 2*r0 < radius")
    return SectorDomain(
        omega=omega,
        radius=float(radius),
        r0=float(r0),
        cutoff_inner=0.5 * r0,
        cutoff_outer=2.0 * r0,
    )


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def radial_rule(
    r_max: float,
    n_nodes: int = 12,
    n_panels: int = 40,
    grade_ratio: float = 0.5,
    band: tuple[float, float] | None = None,
    band_panels: int = 8,
):
    """Composite Gauss rule on (0, r_max), panels graded geometrically to 0.

    Panel boundaries are r_max * ratio^k down to the innermost panel touching
    0.  When ``band`` is given (the cutoff blend interval), its endpoints are
    inserted as panel boundaries and the interior is split into band_panels
    equal panels: the blend's exponential tails are steep and must not
    straddle panel edges.  Returns (nodes, weights) for the plain dr measure.
    """
    if not 0.0 < grade_ratio < 1.0:
        raise ValueError("grade_ratio must be in (0, 1)")
    edges = list(r_max * grade_ratio ** np.arange(n_panels + 1)) + [0.0]
    if band is not None:
        lo, hi = band
        edges = [e for e in edges if not lo < e < hi]
        edges.extend(np.linspace(lo, hi, band_panels + 1))
    edges = np.array(sorted(set(edges)))
    x, w = _leggauss(n_nodes)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        nodes.append(a + half * (x + 1.0))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class PolarQuadrature:
    """Tensor quadrature on the sector; the polar Jacobian r rides with ``jac``.

    ``spec`` remembers the generation parameters so a refined companion rule
    (for convergence certification) can be produced with ``refined()``.
    """

    r: np.ndarray
    wr: np.ndarray
    theta: np.ndarray
    wtheta: np.ndarray
    spec: tuple = ()

    def __post_init__(self):
        if np.any(self.wr <= 0) or np.any(self.wtheta <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def jac(self) -> np.ndarray:
        return self.wr * self.r

    def integrate(self, values) -> float:
        """Integral over the sector of a field sampled on the (r, theta) grid."""
        values = np.asarray(values)
        if values.shape != (self.r.size, self.theta.size):
            raise ValueError("field samples must have shape (n_r, n_theta)")
        return float(self.jac @ values @ self.wtheta)

    def refined(self) -> "PolarQuadrature":
        if not self.spec:
            raise ValueError("quadrature carries no generation parameters")
        r_max, omega, n_radial, radial_panels, n_angular, grade_ratio, band, band_panels = self.spec
        return _build_quadrature(r_max, omega, n_radial + 4, radial_panels + 8,
                                 2 * n_angular, grade_ratio, band, 2 * band_panels)

    def signature(self) -> str:
        return f"nr={self.r.size};nt={self.theta.size};rmin={self.r.min():.3e}"


def _build_quadrature(r_max, omega, n_radial, radial_panels, n_angular,
                      grade_ratio, band, band_panels) -> PolarQuadrature:
    r, wr = radial_rule(r_max, n_radial, radial_panels, grade_ratio, band, band_panels)
    x, w = _leggauss(n_angular)
    theta = 0.5 * omega * (x + 1.0)
    wtheta = 0.5 * omega * w
    return PolarQuadrature(
        r=r, wr=wr, theta=theta, wtheta=wtheta,
        spec=(r_max, omega, n_radial, radial_panels, n_angular, grade_ratio, band, band_panels),
    )


def polar_quadrature(
    d: SectorDomain,
    n_radial: int = 12,
    radial_panels: int = 40,
    n_angular: int = 96,
    grade_ratio: float = 0.5,
    band_panels: int = 8,
) -> PolarQuadrature:
    return _build_quadrature(d.radius, d.omega, n_radial, radial_panels, n_angular,
                             grade_ratio, (d.cutoff_inner, d.cutoff_outer), band_panels)


# ---------------------------------------------------------------------------
# Weighted norms
# ---------------------------------------------------------------------------


def weighted_norm(u, ell: int, beta: float, d: SectorDomain, quad: PolarQuadrature | None = None) -> float:
    """Weighted Sobolev norm of order ``ell`` with weight exponent ``beta``.

    ``u`` supplies polar derivatives on the quadrature grid: either a callable
    ``u(r, theta, j, k)`` returning the (n_r, n_theta) samples of
    d_r^j d_theta^k u, or a dict {(j, k): samples}.  With ell = beta = 0 this
    is the plain L2 norm.
    """
    if quad is None:
        quad = polar_quadrature(d)
    if callable(u):
        def deriv(j, k):
            return np.asarray(u(quad.r, quad.theta, j, k), dtype=float)
    else:
        def deriv(j, k):
            try:
                return np.asarray(u[(j, k)], dtype=float)
            except KeyError as exc:
                raise ValueError(f"missing derivative samples for (j, k) = {(j, k)}") from exc

    total = 0.0
    for j in range(ell + 1):
        weight = quad.r ** (2.0 * (beta - ell + j))
        for k in range(ell + 1 - j):
            vals = deriv(j, k)
            if vals.shape != (quad.r.size, quad.theta.size):
                raise ValueError("derivative samples must match the quadrature grid")
            total += float((quad.jac * weight) @ vals**2 @ quad.wtheta)
    return math.sqrt(total)
