"""H^2_0-conforming spectral space on the sector, with singular enrichment.

Every basis function is a separable product f(r) * g(theta):

  * smooth tensor functions  r^2 * u(r) * g(theta), where u carries a
    (1 - r/R)^2 factor (clamped arc) and g a (t(1-t))^2 factor (clamped
    edges); both families are L2-orthonormalized Legendre combinations, so
    the mass matrix of the smooth block is the identity up to quadrature
    error and the angular factors are mutually orthogonal;
  * enrichment functions  chi(r) * r^(1+z) * phi(theta)  (plus a log variant
    for double roots) that represent the corner asymptotics exactly.

Separability turns every matrix entry into a product of 1D integrals, so the
three forms

    A = int Du Dv,   S = int grad u . grad v,   M = int u v

assemble as Hadamard products of 1D Gram matrices over the graded polar
quadrature.  The smooth radial factor is stored through u = f / r^2: the
reduced combinations

    f'' + f'/r = 4u + 5 r u' + r^2 u''           (Laplacian, radial part)
    f  / r^2   = u                               (Laplacian, angular part)

and their bilaplacian analogues evaluate without cancellation all the way to
the vertex, which the graded rule approaches within ~1e-12 * R.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as leg
from scipy.linalg import cho_factor, cho_solve, eigh

from .angular import AngularProfile, _profile_any
from .charroots import CharRoot
from .geometry import PolarQuadrature, SectorDomain, _leggauss, polar_quadrature

__all__ = [
    "DiscreteSpace",
    "OperatorBundle",
    "GramConditioningError",
    "QuadratureError",
    "assemble",
    "build_space",
    "dirichlet_lambda1",
    "eval_field",
    "solve_clamped_biharmonic",
]


class GramConditioningError(RuntimeError):
    """Mass Gram too ill-conditioned; reduce enrichment overlap or raise quadrature order."""


class QuadratureError(RuntimeError):
    """Assembly quadrature did not converge on the checked entries."""


# ---------------------------------------------------------------------------
# Radial factors
# ---------------------------------------------------------------------------


class SmoothRadial:
    """f(r) = r^2 * u(r), u a Legendre series in 2r/R - 1 vanishing doubly at R."""

    def __init__(self, coef: np.ndarray, radius: float):
        self.radius = float(radius)
        self._ders = [np.asarray(coef, dtype=float)]
        for _ in range(4):
            self._ders.append(leg.legder(self._ders[-1]) * (2.0 / self.radius))

    def u(self, r, k: int = 0):
        x = 2.0 * np.asarray(r, dtype=float) / self.radius - 1.0
        return leg.legval(x, self._ders[k])

    def sample(self, r, kind: str):
        r = np.asarray(r, dtype=float)
        u0 = self.u(r, 0)
        if kind == "value":
            return r**2 * u0
        u1 = self.u(r, 1)
        if kind == "d1":
            return 2.0 * r * u0 + r**2 * u1
        u2 = self.u(r, 2)
        if kind == "G":  # f'' + f'/r
            return 4.0 * u0 + 5.0 * r * u1 + r**2 * u2
        if kind == "H":  # f / r^2
            return u0
        if kind == "T0":
            u3, u4 = self.u(r, 3), self.u(r, 4)
            return 9.0 * u1 / r + 23.0 * u2 + 10.0 * r * u3 + r**2 * u4
        if kind == "T2":
            return 4.0 * u0 / r**2 + 6.0 * u1 / r + 2.0 * u2
        if kind == "T4":
            return u0 / r**2
        raise ValueError(f"unknown radial sample kind {kind!r}")


_FALLING = [np.poly1d([1.0])]
for _m in range(1, 5):
    _FALLING.append(_FALLING[-1] * np.poly1d([1.0, -(_m - 1)]))


def _power_deriv(s: complex, r: np.ndarray, m: int, with_log: bool):
    """m-th derivative of r^s (optionally r^s * ln r); complex s supported."""
    p = _FALLING[m]
    if not with_log:
        return p(s) * r ** (s - m)
    return (p(s) * np.log(r) + p.deriv()(s)) * r ** (s - m)


class SingularRadial:
    """f(r) = chi(r) * Re/Im[r^(1+z)] * (ln r)^log; derivatives by Leibniz.

    For real roots ``part`` stays "re" and the power is real; for a complex
    root the real and imaginary parts r^(1+x) cos(y ln r), r^(1+x) sin(y ln r)
    serve as two real enrichment factors.
    """

    def __init__(self, z: complex, cutoff, with_log: bool = False, part: str = "re"):
        self.z = complex(z)
        self.cutoff = cutoff
        self.with_log = bool(with_log)
        if part not in ("re", "im"):
            raise ValueError("part must be 're' or 'im'")
        self.part = part

    def deriv(self, r, k: int):
        r = np.asarray(r, dtype=float)
        jets = self.cutoff.jet(r)
        out = np.zeros(r.shape, dtype=complex)
        for i in range(k + 1):
            out += math.comb(k, i) * jets[i] * _power_deriv(1.0 + self.z, r, k - i, self.with_log)
        return out.real if self.part == "re" else out.imag

    def sample(self, r, kind: str):
        r = np.asarray(r, dtype=float)
        if kind == "value":
            return self.deriv(r, 0)
        if kind == "d1":
            return self.deriv(r, 1)
        if kind == "G":
            return self.deriv(r, 2) + self.deriv(r, 1) / r
        if kind == "H":
            return self.deriv(r, 0) / r**2
        if kind == "T0":
            return (self.deriv(r, 4) + 2.0 * self.deriv(r, 3) / r
                    - self.deriv(r, 2) / r**2 + self.deriv(r, 1) / r**3)
        if kind == "T2":
            return (2.0 * self.deriv(r, 2) / r**2 - 2.0 * self.deriv(r, 1) / r**3
                    + 4.0 * self.deriv(r, 0) / r**4)
        if kind == "T4":
            return self.deriv(r, 0) / r**4
        raise ValueError(f"unknown radial sample kind {kind!r}")


# ---------------------------------------------------------------------------
# Angular factors
# ---------------------------------------------------------------------------


class PolyAngular:
    """Legendre series in 2 theta/omega - 1 with built-in clamped quartic."""

    def __init__(self, coef: np.ndarray, omega: float):
        self.omega = float(omega)
        self._ders = [np.asarray(coef, dtype=float)]
        for _ in range(4):
            self._ders.append(leg.legder(self._ders[-1]) * (2.0 / self.omega))

    def sample(self, theta, k: int = 0):
        x = 2.0 * np.asarray(theta, dtype=float) / self.omega - 1.0
        return leg.legval(x, self._ders[k])


class TrigAngular:
    """Angular profile of an enrichment root (trig combination, analytic
    derivatives); ``part`` selects the real or imaginary component."""

    def __init__(self, profile: AngularProfile, part: str = "re"):
        self.profile = profile
        self.part = part

    def sample(self, theta, k: int = 0):
        vals = self.profile.eval(theta, k)
        if np.iscomplexobj(vals):
            return vals.real if self.part == "re" else vals.imag
        return vals if self.part == "re" else np.zeros_like(vals)


@dataclass(frozen=True)
class BasisFunction:
    """Sum of separable products: terms are (radial, angular, coefficient)."""

    terms: tuple


@dataclass(frozen=True)
class EnrichmentDof:
    root: CharRoot
    profile: AngularProfile
    with_log: bool
    index: int
    part: str = "re"


# ---------------------------------------------------------------------------
# Space construction
# ---------------------------------------------------------------------------


def _orthonormal_family(seeds: list[np.ndarray], gram_weight, half: float):
    """L2-orthonormalize Legendre-series seeds against the given 1D weight.

    gram_weight maps mapped Gauss nodes x in (-1, 1) to the weight values;
    ``half`` is the Jacobian of the affine map onto the physical interval.
    """
    width = max(c.size for c in seeds)
    seeds = np.array([np.pad(c, (0, width - c.size)) for c in seeds])
    x, w = _leggauss(2 * width + 16)
    vals = np.array([leg.legval(x, c) for c in seeds])
    gram = (vals * (w * gram_weight(x) * half)) @ vals.T
    chol = np.linalg.cholesky(gram)
    return np.linalg.solve(chol, seeds)


@dataclass(frozen=True)
class DiscreteSpace:
    """H^2_0-conforming basis: smooth tensor block plus enrichment.

    Each basis function is a short sum of separable radial x angular terms
    (one term for smooth and real-root functions, two for the real/imaginary
    parts of complex-root functions).  Assembly and evaluation run over the
    flattened term list; ``term_map`` spreads term contributions back onto
    functions with their coefficients.
    """

    domain: SectorDomain
    n_r: int
    n_theta: int
    functions: list[BasisFunction]
    enrichments: list[EnrichmentDof]

    @property
    def dim(self) -> int:
        return len(self.functions)

    @property
    def term_list(self):
        return [t for f in self.functions for t in f.terms]

    @property
    def term_map(self) -> np.ndarray:
        """(dim x n_terms) coefficient matrix: function = sum coef * term."""
        terms = self.term_list
        P = np.zeros((self.dim, len(terms)))
        k = 0
        for i, f in enumerate(self.functions):
            for _, _, coef in f.terms:
                P[i, k] = coef
                k += 1
        return P

    def term_radial_samples(self, r, kind: str) -> np.ndarray:
        return np.array([rad.sample(r, kind) for rad, _, _ in self.term_list])

    def term_angular_samples(self, theta, k: int) -> np.ndarray:
        return np.array([ang.sample(theta, k) for _, ang, _ in self.term_list])

    def enrichment_key(self) -> str:
        parts = [f"z={e.root.z.real:.17g}+{e.root.z.imag:.17g}i"
                 f"{'L' if e.with_log else ''}{e.part}" for e in self.enrichments]
        return ",".join(parts) if parts else "none"


def build_space(
    d: SectorDomain,
    n_r: int,
    n_theta: int,
    enrich: tuple[CharRoot, ...] | list[CharRoot] = (),
) -> DiscreteSpace:
    """Smooth clamped tensor basis of size n_r * n_theta plus enrichment.

    Real simple roots contribute one cutoff singular function each (double
    roots a log pair); a complex-conjugate root pair contributes the real and
    imaginary parts of chi r^(1+z) phi as two real functions (conjugates are
    deduplicated, so passing both members of a pair is fine).
    """
    if n_r < 4 or n_theta < 4:
        raise ValueError("need n_r, n_theta >= 4")
    for root in enrich:
        if not 0.0 < root.z.real < 2.0:
            raise ValueError("enrichment roots must have Re z in (0, 2)")

    # radial seeds: (1 - x)^2 * P_i in x = r/R, orthonormal in weight r^5 dr
    # (the weight the full factors r^2 u see under the polar Jacobian)
    quart_r = leg.poly2leg([0.25, -0.5, 0.25])
    seeds_r = [leg.legmul(quart_r, np.eye(n_r)[i]) for i in range(n_r)]
    half_r = 0.5 * d.radius

    def weight_r(x):
        r = half_r * (x + 1.0)
        return r**5

    rad_coefs = _orthonormal_family(seeds_r, weight_r, half_r)
    radials = [SmoothRadial(c, d.radius) for c in rad_coefs]

    # angular seeds: (t(1-t))^2 * P_j, orthonormal in plain d(theta)
    quart_t = leg.poly2leg(np.array([1.0, 0.0, -2.0, 0.0, 1.0]) / 16.0)
    seeds_t = [leg.legmul(quart_t, np.eye(n_theta)[j]) for j in range(n_theta)]
    ang_coefs = _orthonormal_family(seeds_t, lambda x: np.ones_like(x), 0.5 * d.omega)
    angulars = [PolyAngular(c, d.omega) for c in ang_coefs]

    functions = [BasisFunction(terms=((R, T, 1.0),)) for R in radials for T in angulars]

    enrichments = []
    cutoff = d.cutoff
    seen = []
    for root in enrich:
        if any(abs(root.z - z0) < 1e-10 or abs(root.z - np.conj(z0)) < 1e-10 for z0 in seen):
            continue
        seen.append(root.z)
        profile = _profile_any(root, d.omega)
        if root.is_real:
            variants = [False] if root.multiplicity == 1 else [False, True]
            for with_log in variants:
                enrichments.append(EnrichmentDof(root=root, profile=profile,
                                                 with_log=with_log, index=len(functions)))
                functions.append(BasisFunction(terms=(
                    (SingularRadial(root.z.real, cutoff, with_log=with_log),
                     TrigAngular(profile), 1.0),)))
        else:
            # Re(rho phi) = Re(rho)Re(phi) - Im(rho)Im(phi); Im analogous
            rr = SingularRadial(root.z, cutoff, part="re")
            ri = SingularRadial(root.z, cutoff, part="im")
            pr = TrigAngular(profile, part="re")
            pi = TrigAngular(profile, part="im")
            for part, terms in (("re", ((rr, pr, 1.0), (ri, pi, -1.0))),
                                ("im", ((rr, pi, 1.0), (ri, pr, 1.0)))):
                enrichments.append(EnrichmentDof(root=root, profile=profile,
                                                 with_log=False, index=len(functions),
                                                 part=part))
                functions.append(BasisFunction(terms=terms))

    return DiscreteSpace(domain=d, n_r=n_r, n_theta=n_theta,
                         functions=functions, enrichments=enrichments)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def default_quadrature(space: DiscreteSpace) -> PolarQuadrature:
    """Quadrature matched to the basis: per-panel order covers the radial
    polynomial degree (weight r^5 included), angular count the clamped polys."""
    return polar_quadrature(
        space.domain,
        n_radial=max(12, space.n_r + 8),
        n_angular=max(96, 2 * space.n_theta + 32),
    )


@dataclass(frozen=True)
class OperatorBundle:
    """Assembled symmetric forms over the discrete space.

    A = int Du Dv (positive definite), S = int grad u . grad v (psd),
    M = int u v (positive definite).  Immutable; shared-read safe.
    """

    A: np.ndarray
    S: np.ndarray
    M: np.ndarray
    space: DiscreteSpace
    quad: PolarQuadrature
    meta: dict = field(default_factory=dict)


def _assemble_matrices(space: DiscreteSpace, quad: PolarQuadrature):
    r, theta = quad.r, quad.theta
    wr_r = quad.wr * r          # r dr
    wr_inv = quad.wr / r        # dr / r
    wt = quad.wtheta

    V_r = space.term_radial_samples(r, "value")
    D_r = space.term_radial_samples(r, "d1")
    G_r = space.term_radial_samples(r, "G")
    H_r = space.term_radial_samples(r, "H")
    V_t = space.term_angular_samples(theta, 0)
    D_t = space.term_angular_samples(theta, 1)
    K_t = space.term_angular_samples(theta, 2)
    P = space.term_map

    def gram(Pm, w, Q):
        return (Pm * w) @ Q.T

    M = gram(V_r, wr_r, V_r) * gram(V_t, wt, V_t)
    S = gram(D_r, wr_r, D_r) * gram(V_t, wt, V_t) + gram(V_r, wr_inv, V_r) * gram(D_t, wt, D_t)
    A = (
        gram(G_r, wr_r, G_r) * gram(V_t, wt, V_t)
        + gram(G_r, wr_r, H_r) * gram(V_t, wt, K_t)
        + gram(H_r, wr_r, G_r) * gram(K_t, wt, V_t)
        + gram(H_r, wr_r, H_r) * gram(K_t, wt, K_t)
    )
    A, S, M = (P @ X @ P.T for X in (A, S, M))
    return (0.5 * (A + A.T), 0.5 * (S + S.T), 0.5 * (M + M.T))


def assemble(space: DiscreteSpace, quad: PolarQuadrature | None = None,
             validate: bool = True) -> OperatorBundle:
    """Assemble A, S, M; optionally certify quadrature convergence by doubling.

    The refinement check compares all diagonal entries plus a random set of
    off-diagonal ones between the given rule and a finer companion; entries
    must agree to 1e-10 relative or QuadratureError is raised.
    """
    if quad is None:
        quad = default_quadrature(space)
    A, S, M = _assemble_matrices(space, quad)

    if validate:
        A2, S2, M2 = _assemble_matrices(space, quad.refined())
        rng = np.random.default_rng(12345)
        n = space.dim
        idx = np.vstack([np.stack([np.arange(n), np.arange(n)], axis=1),
                         rng.integers(0, n, size=(40, 2))])
        # enrichment couplings carry the singular integrands
        for e in space.enrichments:
            idx = np.vstack([idx, [e.index, 0], [e.index, n - 1]])
        for X, X2, name in ((A, A2, "A"), (S, S2, "S"), (M, M2, "M")):
            scale = np.abs(X).max()
            for i, j in idx:
                err = abs(X[i, j] - X2[i, j]) / max(scale, abs(X2[i, j]))
                if err > 1e-10:
                    raise QuadratureError(
                        f"{name}[{i},{j}] changed by {err:.2e} under quadrature doubling")

    evals = np.linalg.eigvalsh(M)
    if evals[0] <= 1e-12 * evals[-1]:
        raise GramConditioningError(
            f"mass Gram condition {evals[-1] / max(evals[0], 1e-300):.2e}; "
            "reduce enrichment overlap or raise quadrature order")

    meta = {
        "domain": space.domain.key(),
        "n_r": str(space.n_r),
        "n_theta": str(space.n_theta),
        "enrichment": space.enrichment_key(),
        "quadrature": quad.signature(),
    }
    return OperatorBundle(A=A, S=S, M=M, space=space, quad=quad, meta=meta)


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------

_KIND_TERMS = {
    "value": (("value", 0),),
    "dr": (("d1", 0),),
    "dtheta": (("value", 1),),
    "lap": (("G", 0), ("H", 2)),
    "bilap": (("T0", 0), ("T2", 2), ("T4", 4)),
}


def eval_field(space: DiscreteSpace, coeffs: np.ndarray, r, theta, kind: str = "value"):
    """Tensor samples of a discrete field (or a derived quantity) on r x theta."""
    try:
        terms = _KIND_TERMS[kind]
    except KeyError:
        raise ValueError(f"unknown field kind {kind!r}") from None
    r = np.atleast_1d(np.asarray(r, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = np.zeros((r.size, theta.size))
    amp = np.asarray(coeffs, dtype=float) @ space.term_map
    for rad_kind, ang_order in terms:
        F = space.term_radial_samples(r, rad_kind)
        G = space.term_angular_samples(theta, ang_order)
        out += (amp[:, None] * F).T @ G
    return out


# ---------------------------------------------------------------------------
# Solves
# ---------------------------------------------------------------------------


def load_vector(space: DiscreteSpace, quad: PolarQuadrature, source) -> np.ndarray:
    """int_D source * basis_a dx for each basis function."""
    vals = source(quad.r, quad.theta) if callable(source) else np.asarray(source, dtype=float)
    if vals.shape != (quad.r.size, quad.theta.size):
        raise ValueError("source samples must match the quadrature grid")
    F = space.term_radial_samples(quad.r, "value") * quad.jac
    G = space.term_angular_samples(quad.theta, 0) * quad.wtheta
    return space.term_map @ np.einsum("ak,kl,al->a", F, vals, G)


def solve_clamped_biharmonic(b: OperatorBundle, source) -> np.ndarray:
    """Galerkin solve of Delta^2 u = source with clamped boundary: A x = load.

    One step of iterative refinement keeps the relative residual near machine
    precision even for stiff A; a residual above 1e-10 raises.
    """
    load = source if (isinstance(source, np.ndarray) and source.ndim == 1
                      and source.size == b.space.dim) else load_vector(b.space, b.quad, source)
    if not np.any(load):
        return np.zeros(b.space.dim)
    c, low = cho_factor(b.A)
    x = cho_solve((c, low), load)
    x += cho_solve((c, low), load - b.A @ x)
    rel = np.linalg.norm(b.A @ x - load) / np.linalg.norm(load)
    if rel > 1e-10:
        raise RuntimeError(f"clamped biharmonic solve residual {rel:.3e} exceeds 1e-10")
    return x


def dirichlet_lambda1(d: SectorDomain, n_r: int, n_theta: int) -> float:
    """First Dirichlet eigenvalue of the Laplacian on the sector.

    Conforming H^1_0 subspace: radial factors r * (1 - r/R) * P_i against the
    exact angular eigenfunctions sin(j pi theta / omega); the problem block-
    diagonalizes over j, and nested polynomial spaces make the discrete value
    decrease monotonically toward the true eigenvalue.
    """
    if n_r < 8 or n_theta < 8:
        raise ValueError("need resolution >= 8x8")
    half = 0.5 * d.radius
    lin = leg.poly2leg([0.5, -0.5])  # (1 - x)/2 = 1 - r/R on the mapped variable
    seeds = [leg.legmul(lin, np.eye(n_r)[i]) for i in range(n_r)]
    width = max(c.size for c in seeds)
    seeds = np.array([np.pad(c, (0, width - c.size)) for c in seeds])
    ders = np.array([leg.legder(c) for c in seeds]) * (2.0 / d.radius)

    x, w = _leggauss(2 * width + 16)
    r = half * (x + 1.0)
    wq = w * half
    V = np.array([leg.legval(x, c) for c in seeds])       # v_i(r)
    Dv = np.array([leg.legval(x, np.pad(c, (0, 1))) for c in ders])

    # t_i = r v_i ; t' = v + r v' ; t^2/r = r v^2
    T = V * r
    Td = V + r * Dv
    M = (T * (wq * r)) @ T.T
    K_rad = (Td * (wq * r)) @ Td.T
    K_ang = (V * (wq * r)) @ V.T  # int t_i t_k / r dr = int r v_i v_k dr

    best = math.inf
    for j in range(1, n_theta + 1):
        nu = j * math.pi / d.omega
        vals = eigh(K_rad + nu**2 * K_ang, M, eigvals_only=True)
        best = min(best, vals[0])
    return float(best)
