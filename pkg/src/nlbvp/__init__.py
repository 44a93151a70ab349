"""Nonlocal boundary-value problems with heterogeneously localized horizons."""
from __future__ import annotations

from .convolutions import (
    DualDatum,
    Field,
    div_k_tilde_star,
    j_p_operators,
    k_delta,
    k_delta_star,
    k_tilde,
    k_tilde_star,
    mollify_data,
)
from .geometry import Domain, Mesh, build_mesh, exact_distance, smoothed_distance
from .kernels import (
    Nonlinearity,
    a_delta_constant,
    boundary_flux,
    calibrate_rho,
    cbar,
    gamma_kernel,
    normalization_constant,
)
from .localization import eta, horizon_threshold, make_horizon, make_rule, validate_rule
from .operators import (
    FormContext,
    apply_pointwise,
    apply_truncated,
    bilinear,
    energy,
    make_context,
    seminorm,
    split_D1_D2,
)
from .solvers import (
    ProblemSpec,
    SolveReport,
    fixed_point_residual,
    minimize_energy,
    solve,
    solve_dirichlet,
    solve_local,
    solve_neumann,
    solve_robin,
)
from .verification import (
    FluxDistribution,
    StudyTable,
    adjoint_estimate_suite,
    bvp_delta_study,
    check_normalization,
    flux_study,
    green_full,
    green_second,
    green_strong,
    localization_study,
    normal_flux,
    seminorm_relations,
)

__version__ = "0.1.0"
