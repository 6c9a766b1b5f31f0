"""Numerical study of interior transmission eigenfunctions near sector corners.

The pipeline: characteristic-exponent roots -> clamped angular profiles ->
enriched spectral Galerkin discretization of H^2_0(D) -> auxiliary eigenproblem
for the compact operator Delta^-2 (kappa*Delta - lambda) -> conversion of
eigenpairs into transmission eigenvalue pairs (k1, k2) and eigenfunctions
(v, w) -> corner diagnostics (singular-coefficient extraction, blow-up fits at
re-entrant corners, corner-average vanishing at convex corners).
"""

from .geometry import (
    Cutoff,
    PolarQuadrature,
    SectorDomain,
    cutoff_eval,
    make_sector,
    polar_quadrature,
    weighted_norm,
)
from .charroots import (
    CharRoot,
    OmegaThreshold,
    RootCountMismatch,
    char_det,
    char_det_degenerate,
    closed_form_char,
    compute_omega0,
    find_roots,
)
from .angular import (
    AngularProfile,
    AssociatedProfile,
    DualSingular,
    eta1,
    extraction_constant,
    solve_associated,
    solve_profile,
)
from .discretize import (
    DiscreteSpace,
    OperatorBundle,
    assemble,
    build_space,
    default_quadrature,
    dirichlet_lambda1,
    eval_field,
    load_vector,
    solve_clamped_biharmonic,
)
from .spectrum import (
    ItefMode,
    KParams,
    eval_mode_field,
    helmholtz_residuals,
    k_spectrum,
    realness_scan,
    strong_residual,
    synthesize_itef,
    to_wavenumbers,
)
from .corner import (
    CornerReport,
    DualField,
    blowup_fit,
    build_zeta1,
    convex_vanishing,
    corner_average,
    extract_c1,
    singular_functional,
    weighted_regularity_check,
)

__version__ = "0.1.0"
