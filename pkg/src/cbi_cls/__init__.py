"""Simulation and conditional least squares inference for critical CBI processes."""

from .errors import (
    CbiError,
    ConfigError,
    DegenerateDenominator,
    DegenerateDiffusion,
    DegenerateImmigration,
    InvalidConfig,
    MissingEstimate,
    NonFinite,
    NumericalError,
    ParameterError,
    RequiresPureImmigration,
    StepTooCoarse,
    UsageError,
)
from .estimate import (
    ClsEstimate,
    cls_batch,
    cls_rho_betabar,
    gaussian_limit_covariance,
    residuals,
    scaled_errors,
)
from .harness import (
    DistReport,
    ExperimentConfig,
    check_deterministic_limits,
    check_iid_residuals,
    check_scaling_limit,
    run_convergence,
    run_experiment,
)
from .model import (
    CbiParams,
    DerivedParams,
    JumpMeasure,
    derive,
    laplace_transform,
    phi,
    psi,
    solve_v,
)
from .moments import (
    CenteredMoments,
    centered_moments,
    conditional_mean,
    conditional_variance,
    growth_bounds_check,
)
from .simulate import (
    LimitFunctionals,
    SimConfig,
    Skeleton,
    exact_cir_step,
    limit_vector,
    sample_limit_functionals,
    simulate_skeleton,
    simulate_skeletons,
)

__version__ = "0.1.0"
