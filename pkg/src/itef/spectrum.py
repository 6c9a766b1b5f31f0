"""Auxiliary eigenproblem and conversion to transmission eigenpairs.

The compact operator Delta^-2 (kappa*Delta - lambda) on H^2_0(D) is positive
for kappa < 0 < lambda with -kappa/lambda >= 1/lambda_1(D); in the discrete
space its eigenpairs solve the symmetric generalized problem

    (-kappa S - lambda M) x = sigma A x ,

so each eigenvector also satisfies A x = kt S x + lt M x with kt = -kappa/sigma
and lt = -lambda/sigma, the weak form of Delta^2 psi = lt psi - kt Delta psi.
Factoring that fourth-order operator as (Delta + k1^2)(Delta + k2^2) with

    k1^2 + k2^2 = kt,   k1^2 k2^2 = -lt,

gives two wavenumbers (real and distinct whenever lambda < kappa^2/(4 sigma))
and the transmission pair

    v = (Delta + k2^2) psi / (k2^2 - k1^2),
    w = (Delta + k1^2) psi / (k2^2 - k1^2),    v - w = psi exactly.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh

from .discretize import DiscreteSpace, OperatorBundle, dirichlet_lambda1, eval_field

__all__ = [
    "FieldCombo",
    "ItefMode",
    "KParams",
    "eval_mode_field",
    "helmholtz_residuals",
    "k_spectrum",
    "realness_scan",
    "strong_residual",
    "synthesize_itef",
    "to_wavenumbers",
]


@dataclass(frozen=True)
class KParams:
    """Operator parameters; positivity wants -kappa/lambda >= 1/lambda_1(D)."""

    kappa: float
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.kappa >= 0:
            raise ValueError("kappa must be negative")

    def positivity_holds(self, lambda1: float) -> bool:
        return -self.kappa / self.lam >= 1.0 / lambda1


@dataclass(frozen=True)
class FieldCombo:
    """alpha * Laplacian(psi) + beta * psi, evaluated from one coefficient vector."""

    alpha: float
    beta: float

    def eval(self, space: DiscreteSpace, psi: np.ndarray, r, theta):
        return self.alpha * eval_field(space, psi, r, theta, "lap") + \
            self.beta * eval_field(space, psi, r, theta, "value")


@dataclass(frozen=True)
class ItefMode:
    """One eigenpair of the auxiliary operator with its derived quantities."""

    j: int
    sigma: float
    psi: np.ndarray
    kappa_tilde: float
    lambda_tilde: float
    k1: complex
    k2: complex
    is_real: bool
    v: FieldCombo | None = None
    w: FieldCombo | None = None
    residual_v: float | None = None
    residual_w: float | None = None


@lru_cache(maxsize=32)
def _lambda1_cached(domain_key, omega, radius, n_r, n_theta):
    from .geometry import make_sector

    del domain_key
    # r0 does not influence the H^1_0 eigenvalue; rebuild with a valid dummy
    return dirichlet_lambda1(make_sector(omega, radius, radius / 4.0), n_r, n_theta)


def to_wavenumbers(kt: float, lt: float):
    """Wavenumbers (k1, k2) with k1^2 + k2^2 = kt and -k1^2 k2^2 = lt.

    Positive square-root branches, k1 >= k2; returned as floats when the
    realness window lt in (-kt^2/4, 0) holds, complex otherwise.
    """
    disc = cmath.sqrt(kt * kt + 4.0 * lt)
    a = 0.5 * (kt + disc)
    b = 0.5 * (kt - disc)
    k1 = cmath.sqrt(a)
    k2 = cmath.sqrt(b)
    if abs(k1.imag) < 1e-14 * (1.0 + abs(k1)) and abs(k2.imag) < 1e-14 * (1.0 + abs(k2)):
        return float(k1.real), float(k2.real)
    return k1, k2


def k_spectrum(b: OperatorBundle, p: KParams, n_modes: int) -> list[ItefMode]:
    """Leading eigenpairs of the auxiliary operator, A-orthonormal eigenvectors.

    Solves (-kappa S - lambda M) x = sigma A x and returns the n_modes largest
    sigma in non-increasing order.  If the positivity condition fails, a
    warning is emitted and any non-positive sigma are simply passed through.
    """
    space = b.space
    if n_modes < 1 or n_modes > space.dim:
        raise ValueError("n_modes must be in 1..dim")
    lam1 = _lambda1_cached(space.domain.key(), space.domain.omega,
                           space.domain.radius, max(16, space.n_r), max(8, space.n_theta))
    if not p.positivity_holds(lam1):
        warnings.warn(
            f"positivity violated: -kappa/lambda = {-p.kappa / p.lam:.4g} < "
            f"1/lambda_1 = {1.0 / lam1:.4g}; negative eigenvalues possible",
            stacklevel=2)

    B = -p.kappa * b.S - p.lam * b.M
    vals, vecs = eigh(B, b.A)
    order = np.argsort(vals)[::-1][:n_modes]

    modes = []
    for rank, idx in enumerate(order, start=1):
        sigma = float(vals[idx])
        x = vecs[:, idx]
        kt = -p.kappa / sigma
        lt = -p.lam / sigma
        k1, k2 = to_wavenumbers(kt, lt)
        is_real = isinstance(k1, float) and isinstance(k2, float) and abs(k1 - k2) > 0
        modes.append(ItefMode(j=rank, sigma=sigma, psi=x, kappa_tilde=kt,
                              lambda_tilde=lt, k1=k1, k2=k2, is_real=is_real))
    return modes


def realness_scan(modes: list[ItefMode], p: KParams) -> dict:
    """Per-mode check of lambda < kappa^2 / (4 sigma_j) and the global verdict."""
    rows = []
    for m in modes:
        threshold = p.kappa**2 / (4.0 * m.sigma) if m.sigma > 0 else math.inf
        rows.append({
            "j": m.j,
            "sigma": m.sigma,
            "condition_holds": bool(m.sigma > 0 and p.lam < threshold),
            "is_real": m.is_real,
        })
    n_real = sum(r["condition_holds"] for r in rows)
    return {
        "rows": rows,
        "fraction_real": n_real / len(rows) if rows else float("nan"),
        "all_real": n_real == len(rows),
    }


def synthesize_itef(mode: ItefMode) -> ItefMode:
    """Fill the transmission pair v, w; the identity v - w = psi is exact at
    coefficient level because both share the same Laplacian weight."""
    if not mode.is_real:
        raise ValueError("synthesis requires real distinct wavenumbers")
    k1sq = mode.k1.real**2
    k2sq = mode.k2.real**2
    denom = k2sq - k1sq
    if abs(denom) < 1e-8 * max(k1sq, k2sq):
        raise ValueError("near-degenerate pair: |k2^2 - k1^2| below tolerance")
    v = FieldCombo(alpha=1.0 / denom, beta=k2sq / denom)
    w = FieldCombo(alpha=1.0 / denom, beta=k1sq / denom)
    return replace(mode, v=v, w=w)


def eval_mode_field(b: OperatorBundle, mode: ItefMode, which: str, r, theta,
                    kind: str = "value"):
    """Samples of psi (any kind) or of v, w (value or Laplacian) on r x theta."""
    if which == "psi":
        return eval_field(b.space, mode.psi, r, theta, kind)
    combo = getattr(mode, which)
    if combo is None:
        raise ValueError(f"mode {mode.j} has no synthesized field {which!r}")
    if kind == "value":
        return combo.eval(b.space, mode.psi, r, theta)
    if kind == "lap":
        return combo.alpha * eval_field(b.space, mode.psi, r, theta, "bilap") + \
            combo.beta * eval_field(b.space, mode.psi, r, theta, "lap")
    raise ValueError(f"v, w support only value/lap kinds; evaluate psi for gradients")


def strong_residual(b: OperatorBundle, coeffs: np.ndarray, kt: float, lt: float,
                    r_min: float | None = None) -> float:
    """Nondimensional L2 defect of Delta^2 u + kt Delta u - lt u on r >= r_min.

    Normalized by ||Delta^2 u|| + |kt| ||Delta u|| + |lt| ||u|| on the same
    annulus.  The annulus matters: the basis is H^2-conforming only, so the
    pointwise bilaplacian of the smooth block is not square-integrable across
    the vertex.
    """
    quad = b.quad
    if r_min is None:
        r_min = b.space.domain.cutoff_inner
    keep = quad.r >= r_min
    r = quad.r[keep]
    jac = (quad.wr * quad.r)[keep]

    def norm(f):
        return math.sqrt(float(jac @ f**2 @ quad.wtheta))

    bilap = eval_field(b.space, coeffs, r, quad.theta, "bilap")
    lap = eval_field(b.space, coeffs, r, quad.theta, "lap")
    val = eval_field(b.space, coeffs, r, quad.theta, "value")
    scale = norm(bilap) + abs(kt) * norm(lap) + abs(lt) * norm(val)
    if scale == 0:
        return math.inf
    return norm(bilap + kt * lap - lt * val) / scale


def helmholtz_residuals(b: OperatorBundle, mode: ItefMode, r_min: float | None = None):
    """Relative defects of (Delta + k1^2) v and (Delta + k2^2) w.

    Both equal (Delta^2 + kt Delta - lt) psi / (k2^2 - k1^2) identically, so
    a single strong-form defect of psi is reported for each field.  For
    eigenmodes this measures how much corner structure the smooth block has
    not resolved; it converges to zero under refinement only once every
    characteristic root with Re z in (0, 2) is enriched.
    """
    if mode.v is None or mode.w is None:
        raise ValueError("synthesize the mode first")
    res = strong_residual(b, mode.psi, mode.kappa_tilde, mode.lambda_tilde, r_min)
    return res, res
