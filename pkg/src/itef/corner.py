"""Corner diagnostics: singular-coefficient extraction, blow-up fits, averages.

Non-convex side.  The dual field zeta1 = chi * eta1 + h is biharmonic on D
with clamped boundary (h solves the clamped problem with the commutator
source [chi, Delta^2] eta1, supported in the blend annulus).  Pairing a mode's
biharmonic source f_j = lt psi_j - kt Delta psi_j against zeta1 gives

    F_j = int_D zeta1 * f_j dx = c1 * gamma,

with gamma < 0 the extraction constant, so c1 = F_j / gamma estimates the
coefficient of the leading corner term chi r^(1+z1) phi1(theta) in psi_j.  An
independent estimate reads the enriched degree of freedom directly (or fits
the radial power law of Delta psi_j when enrichment is off).  Blow-up is
quantified by the log-log slope of the angular average of |field| over a
window of radii inside the plateau.

Convex side.  Vanishing at the corner is measured through corner averages
m(eps) = |C_eps|^-1 int_{C_eps} w dx on dyadic eps, plus stability of the
weighted norms ||r^-2 u|| and ||r^-1 grad u|| for u = v - w under radial
refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .angular import DualSingular
from .discretize import OperatorBundle, eval_field, load_vector, solve_clamped_biharmonic
from .geometry import (
    Cutoff,
    PolarQuadrature,
    SectorDomain,
    _leggauss,
    polar_quadrature,
    radial_rule,
    weighted_norm,
)
from .spectrum import ItefMode, eval_mode_field

__all__ = [
    "CornerReport",
    "DualField",
    "blowup_fit",
    "build_zeta1",
    "commutator_source",
    "convex_vanishing",
    "corner_average",
    "extract_c1",
    "singular_functional",
    "weighted_regularity_check",
]


# ---------------------------------------------------------------------------
# zeta1 = chi eta1 + h
# ---------------------------------------------------------------------------


def _chi_rho_derivs(cutoff: Cutoff, eta: DualSingular, r, max_order: int = 2):
    """Leibniz derivatives of chi(r) * r^(1-z1) up to max_order."""
    r = np.asarray(r, dtype=float)
    jets = cutoff.jet(r)
    out = []
    for k in range(max_order + 1):
        acc = np.zeros_like(r)
        for i in range(k + 1):
            acc += math.comb(k, i) * jets[i] * eta.radial(r, k - i)
        out.append(acc)
    return out


def commutator_source(eta: DualSingular, cutoff: Cutoff):
    """Pointwise source [chi, Delta^2] eta1; vanishes outside the blend band.

    Every term carries at least one derivative of chi, so the plateau and the
    far region evaluate to literal zero; inside the band the expression uses
    the analytic derivatives of rho = r^(1-z1) and of the blend.
    """
    def source(r, theta):
        r = np.asarray(r, dtype=float)
        jets = cutoff.jet(r)
        rho = [eta.radial(r, k) for k in range(4)]
        c1, c2, c3, c4 = jets[1], jets[2], jets[3], jets[4]
        # T0(chi rho) - chi T0(rho)
        t0 = (
            4.0 * c1 * rho[3] + 6.0 * c2 * rho[2] + 4.0 * c3 * rho[1] + c4 * rho[0]
            + 2.0 * (3.0 * c1 * rho[2] + 3.0 * c2 * rho[1] + c3 * rho[0]) / r
            - (2.0 * c1 * rho[1] + c2 * rho[0]) / r**2
            + (c1 * rho[0]) / r**3
        )
        # T2(chi rho) - chi T2(rho)
        t2 = 2.0 * (2.0 * c1 * rho[1] + c2 * rho[0]) / r**2 - 2.0 * (c1 * rho[0]) / r**3
        phi0 = eta.profile.eval(theta, 0)
        phi2 = eta.profile.eval(theta, 2)
        return -(np.outer(t0, phi0) + np.outer(t2, phi2))

    return source


@dataclass(frozen=True)
class DualField:
    """zeta1 = chi eta1 + h with h the discrete clamped-biharmonic correction."""

    bundle: OperatorBundle
    eta: DualSingular
    cutoff: Cutoff
    h: np.ndarray
    source_norm: float
    galerkin_residual: float

    def value(self, r, theta):
        chirho = _chi_rho_derivs(self.cutoff, self.eta, r, 0)[0]
        return np.outer(chirho, self.eta.profile.eval(theta, 0)) + \
            eval_field(self.bundle.space, self.h, r, theta, "value")

    def laplacian(self, r, theta):
        r = np.asarray(r, dtype=float)
        f0, f1, f2 = _chi_rho_derivs(self.cutoff, self.eta, r, 2)
        g = f2 + f1 / r
        analytic = np.outer(g, self.eta.profile.eval(theta, 0)) + \
            np.outer(f0 / r**2, self.eta.profile.eval(theta, 2))
        return analytic + eval_field(self.bundle.space, self.h, r, theta, "lap")

    def gradient(self, r, theta):
        """(d_r zeta1, r^-1 d_theta zeta1) tensor samples."""
        r = np.asarray(r, dtype=float)
        f0, f1 = _chi_rho_derivs(self.cutoff, self.eta, r, 1)[:2]
        dr = np.outer(f1, self.eta.profile.eval(theta, 0)) + \
            eval_field(self.bundle.space, self.h, r, theta, "dr")
        dt = np.outer(f0 / r, self.eta.profile.eval(theta, 1)) + \
            eval_field(self.bundle.space, self.h, r, theta, "dtheta") / r[:, None]
        return dr, dt


def build_zeta1(bundle: OperatorBundle, eta: DualSingular,
                cutoff: Cutoff | None = None) -> DualField:
    """Assemble zeta1 by solving the clamped correction problem for h.

    The weak residual of Delta^2 zeta1 against the smooth test block (the
    integration-by-parts defect of the analytic part plus A h) is recorded;
    it converges to zero under refinement.  Enriched test rows are excluded:
    for those the corner boundary terms of the pairing do not vanish (that
    non-vanishing is exactly the extraction mechanism).
    """
    space = bundle.space
    if cutoff is None:
        cutoff = space.domain.cutoff
    quad = bundle.quad
    src = commutator_source(eta, cutoff)
    vals = src(quad.r, quad.theta)
    load = load_vector(space, quad, vals)
    h = solve_clamped_biharmonic(bundle, load)

    # Galerkin residual over the smooth block: int D(chi eta) D(phi_a) + (A h)_a
    r = quad.r
    f0, f1, f2 = _chi_rho_derivs(cutoff, eta, r, 2)
    g_rad = f2 + f1 / r
    h_rad = f0 / r**2
    lap_analytic = np.outer(g_rad, eta.profile.eval(quad.theta, 0)) + \
        np.outer(h_rad, eta.profile.eval(quad.theta, 2))
    G = space.term_radial_samples(r, "G") * quad.jac
    H = space.term_radial_samples(r, "H") * quad.jac
    Vt = space.term_angular_samples(quad.theta, 0) * quad.wtheta
    Kt = space.term_angular_samples(quad.theta, 2) * quad.wtheta
    pair = space.term_map @ (np.einsum("ak,kl,al->a", G, lap_analytic, Vt) +
                             np.einsum("ak,kl,al->a", H, lap_analytic, Kt))
    resid = pair + bundle.A @ h
    n_smooth = space.n_r * space.n_theta
    scale = np.linalg.norm(load) + np.linalg.norm(pair)
    galerkin_residual = float(np.linalg.norm(resid[:n_smooth]) / scale)

    return DualField(bundle=bundle, eta=eta, cutoff=cutoff, h=h,
                     source_norm=float(math.sqrt(quad.integrate(vals**2))),
                     galerkin_residual=galerkin_residual)


# ---------------------------------------------------------------------------
# Singular functional and coefficient extraction
# ---------------------------------------------------------------------------


def singular_functional(mode: ItefMode, zf: DualField,
                        q: PolarQuadrature | None = None) -> float:
    """F_j = int_D zeta1 (lt psi_j - kt Delta psi_j) dx."""
    if not mode.is_real:
        raise ValueError("singular functional needs real tilde parameters")
    b = zf.bundle
    if q is None:
        q = b.quad
    zeta = zf.value(q.r, q.theta)
    psi = eval_field(b.space, mode.psi, q.r, q.theta, "value")
    lap = eval_field(b.space, mode.psi, q.r, q.theta, "lap")
    return q.integrate(zeta * (mode.lambda_tilde * psi - mode.kappa_tilde * lap))


def functional_scale(mode: ItefMode, zf: DualField) -> float:
    """Natural magnitude of F_j used for the conclusiveness threshold."""
    b = zf.bundle
    q = b.quad
    zeta_norm = math.sqrt(q.integrate(zf.value(q.r, q.theta) ** 2))
    psi_norm = math.sqrt(float(mode.psi @ b.M @ mode.psi))
    lap_norm = math.sqrt(float(mode.psi @ b.A @ mode.psi))
    return zeta_norm * (abs(mode.lambda_tilde) * psi_norm + abs(mode.kappa_tilde) * lap_norm)


def extract_c1(mode: ItefMode, zf: DualField, gamma: float,
               rel_tol: float = 1e-8, r_window: tuple[float, float] | None = None):
    """Two estimates of the leading singular coefficient of psi_j.

    c1_pairing = -F_j / gamma: the Green identity that turns the pairing into
    the coefficient runs over D minus a shrinking ball, so the inner-arc
    boundary terms carry the inward normal and the pairing constant is -gamma
    (positive).  c1_fit reads the enriched degree of freedom of the z1 root,
    or fits Delta psi_j against the predicted radial power law on the window
    when enrichment is off.  Raises when |F_j| is below the scale-relative
    threshold: the criterion is sufficient only, so such modes are
    inconclusive rather than regular.
    """
    if gamma >= 0:
        raise ValueError("extraction constant must be negative")
    F = singular_functional(mode, zf)
    if abs(F) <= rel_tol * functional_scale(mode, zf):
        raise ValueError("criterion inconclusive: |F_j| below tolerance "
                         "(c1 may still be nonzero)")
    c1_pairing = -F / gamma

    b = zf.bundle
    z1 = zf.eta.z1
    enr = [e for e in b.space.enrichments
           if not e.with_log and abs(e.root.z.real - z1) < 1e-12]
    if enr:
        c1_fit = float(mode.psi[enr[0].index])
    else:
        c1_fit = _c1_from_window_fit(b, mode.psi, z1, zf.eta.profile, r_window)
    return c1_pairing, c1_fit


def _c1_from_window_fit(bundle, coeffs, z1, profile, r_window=None):
    """Weighted least squares of Delta psi against r^(z1-1) times the known
    angular factor, with a low-order smooth correction in the regression."""
    d = bundle.space.domain
    if r_window is None:
        r_window = (1e-3 * d.radius, 1e-2 * d.radius)
    r = np.geomspace(r_window[0], r_window[1], 16)
    x, wq = _leggauss(64)
    theta = 0.5 * d.omega * (x + 1.0)
    wt = 0.5 * d.omega * wq
    lap = eval_field(bundle.space, coeffs, r, theta, "lap")
    ang = (1.0 + z1) ** 2 * profile.eval(theta, 0) + profile.eval(theta, 2)
    ang_norm = float(wt @ ang**2)
    g = (lap * wt) @ ang / ang_norm  # angular projection per radius
    basis = np.stack([r ** (z1 - 1.0), np.ones_like(r), r, r**2], axis=1)
    sol, *_ = np.linalg.lstsq(basis, g, rcond=None)
    return float(sol[0])


# ---------------------------------------------------------------------------
# Blow-up fit
# ---------------------------------------------------------------------------


def blowup_fit(field, z1: float, d: SectorDomain,
               r_window: tuple[float, float] = None,
               reference_profile=None, n_radii: int = 12, n_theta: int = 64):
    """Fitted decay exponent of the angular average of |field| near the vertex.

    ``field(r_array, theta_array)`` returns tensor samples.  Returns
    (alpha_fit, profile_correlation): minus the log-log slope, and the cosine
    similarity between the mean angular shape and ``reference_profile(theta)``
    (nan when no reference is supplied).
    """
    if r_window is None:
        r_window = (1e-3 * d.radius, 1e-2 * d.radius)
    if not 0 < r_window[0] < r_window[1] <= d.radius:
        raise ValueError("bad fit window")
    r = np.geomspace(r_window[0], r_window[1], n_radii)
    x, wq = _leggauss(n_theta)
    theta = 0.5 * d.omega * (x + 1.0)
    wt = 0.5 * d.omega * wq
    vals = np.asarray(field(r, theta), dtype=float)
    avg = (np.abs(vals) @ wt) / d.omega
    if np.max(avg) < 1e-280:
        raise ValueError("field indistinguishable from 0 on the window")
    slope = np.polyfit(np.log(r), np.log(avg), 1)[0]

    correlation = float("nan")
    if reference_profile is not None:
        ref = np.asarray(reference_profile(theta), dtype=float)
        ref = ref / math.sqrt(float(wt @ ref**2))
        # sign-align each radial slice before averaging the angular shape
        shapes = []
        for i in range(r.size):
            s = vals[i]
            nrm = math.sqrt(float(wt @ s**2))
            if nrm == 0:
                continue
            s = s / nrm
            if float(wt @ (s * ref)) < 0:
                s = -s
            shapes.append(s)
        mean_shape = np.mean(shapes, axis=0)
        mean_shape /= math.sqrt(float(wt @ mean_shape**2))
        correlation = abs(float(wt @ (mean_shape * ref)))
    del z1  # the predicted exponent is the caller's to compare against
    return -float(slope), correlation


# ---------------------------------------------------------------------------
# Convex-corner vanishing
# ---------------------------------------------------------------------------


def corner_average(field, d: SectorDomain, eps: float,
                   n_nodes: int = 12, n_panels: int = 24, n_theta: int = 64) -> float:
    """|C_eps|^-1 int_{C_eps} field dx with a dedicated graded rule on (0, eps)."""
    if eps <= 0 or eps > d.radius:
        raise ValueError("eps must lie in (0, radius]")
    if eps < 1e3 * np.finfo(float).eps * d.radius:
        raise ValueError("epsilon below quadrature resolution")
    r, wr = radial_rule(eps, n_nodes=n_nodes, n_panels=n_panels)
    x, wq = _leggauss(n_theta)
    theta = 0.5 * d.omega * (x + 1.0)
    wt = 0.5 * d.omega * wq
    vals = np.asarray(field(r, theta), dtype=float)
    area = 0.5 * d.omega * eps**2
    return float((wr * r) @ vals @ wt) / area


def convex_vanishing(mode: ItefMode, b: OperatorBundle,
                     eps_list=None) -> dict:
    """Corner averages m(eps) of the pair (v, w) plus fitted decay exponents.

    Returns {"eps", "m_v", "m_w", "beta_v", "beta_w", "beta_fit"}, the last
    being the conservative min of the two fitted exponents.
    """
    d = b.space.domain
    if d.omega >= math.pi:
        raise ValueError("convex vanishing diagnostics need omega < pi")
    if mode.v is None or mode.w is None:
        raise ValueError("synthesize the mode first")
    if eps_list is None:
        eps_list = [2.0**-k * d.radius for k in range(3, 9)]
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)

    def field(which):
        return lambda r, theta: eval_mode_field(b, mode, which, r, theta)

    m_v = np.array([corner_average(field("v"), d, e) for e in eps])
    m_w = np.array([corner_average(field("w"), d, e) for e in eps])

    # slope of log|m| against log eps; positive means decay toward the vertex
    beta_v = float(np.polyfit(np.log(eps), np.log(np.abs(m_v)), 1)[0])
    beta_w = float(np.polyfit(np.log(eps), np.log(np.abs(m_w)), 1)[0])
    return {
        "eps": eps,
        "m_v": m_v,
        "m_w": m_w,
        "beta_v": beta_v,
        "beta_w": beta_w,
        "beta_fit": min(beta_v, beta_w),
    }


def weighted_regularity_check(u_deriv, d: SectorDomain, levels=(28, 36, 44),
                              stability_rtol: float = 0.02) -> dict:
    """Refinement stability of ||r^-2 u|| and ||r^-1 grad u||.

    ``u_deriv(r, theta, j, k)`` supplies polar derivatives (as weighted_norm).
    Each level deepens the graded radial rule toward the vertex; a norm is
    stable when the last two levels agree to stability_rtol relative.
    """
    rows = {"panels": list(levels), "r2_u": [], "r1_grad": []}
    for n_panels in levels:
        quad = polar_quadrature(d, radial_panels=n_panels)
        rows["r2_u"].append(weighted_norm(u_deriv, 0, -2.0, d, quad))
        u_r = np.asarray(u_deriv(quad.r, quad.theta, 1, 0), dtype=float)
        u_t = np.asarray(u_deriv(quad.r, quad.theta, 0, 1), dtype=float)
        w = quad.jac / quad.r**2
        val = float(w @ (u_r**2 + (u_t / quad.r[:, None]) ** 2) @ quad.wtheta)
        rows["r1_grad"].append(math.sqrt(val))

    def stable(seq):
        a, bb = seq[-2], seq[-1]
        return bool(abs(bb - a) <= stability_rtol * max(abs(a), abs(bb), 1e-300))

    rows["r2_u_stable"] = stable(rows["r2_u"])
    rows["r1_grad_stable"] = stable(rows["r1_grad"])
    return rows


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CornerReport:
    """Per-mode corner diagnostics produced by the pipeline."""

    mode_index: int
    functional: float
    conclusive: bool
    c1_pairing: float = float("nan")
    c1_fit: float = float("nan")
    alpha_fit: float = float("nan")
    alpha_v: float = float("nan")
    alpha_w: float = float("nan")
    profile_correlation: float = float("nan")
