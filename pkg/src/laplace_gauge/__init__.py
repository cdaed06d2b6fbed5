"""Probabilistic check of whether a Laplace approximation can be trusted.

The package interrogates a positive function around its mode, conditions a
Gaussian-process model of the reweighted integrand on those evaluations,
and decides whether the implied posterior on the integral keeps the Laplace
approximation inside its central credible interval.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    AllCandidatesFailed,
    AllWeightsZero,
    CellCountOverflow,
    DegenerateCalibration,
    DiagnosticError,
    DimensionMismatch,
    GramNotPD,
    NonFiniteHessian,
    NonFiniteLogF,
    NotNegativeDefinite,
    OptimizationDiverged,
    ReducedSystemSingular,
)
from .integrand import (  # noqa: F401
    GaussianApprox,
    IntegrandSpec,
    banana_spec,
    builtin_spec,
    finite_difference_hessian,
    gaussian_approx,
    gaussian_spec,
    laplace_approx,
    mvt_laplace,
    mvt_spec,
    product_t_integral,
    product_t_spec,
)
from .grids import (  # noqa: F401
    InterrogationGrid,
    Orbit,
    PreliminaryGrid,
    ckf_grid,
    cross2d_grid,
    custom_grid,
    gh2_grid,
    grid_from_json,
    grid_to_json,
)
from .engine import (  # noqa: F401
    DiagnosticConfig,
    DiagnosticReport,
    IntegralPosterior,
    Z_CRIT_DEFAULT,
    Z_CRIT_EXACT,
    diagnose,
    posterior,
    residual_vector,
)
from .calibration import (  # noqa: F401
    CalibrationResult,
    calibrate,
    calibrate_lambda_l2,
    calibrate_lambda_target,
    find_nu,
    gamma_rule,
    load_calibration,
    save_calibration,
    solve_alpha,
)
from .oracles import (  # noqa: F401
    ISResult,
    importance_sample,
    l2_error,
    riemann_integrate,
)
