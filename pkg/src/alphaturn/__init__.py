"""Spectral and factor-model estimation of portfolio turnover reduction
across alpha streams."""

from .errors import NumericalError, ValidationError
from .panel import (
    AlphaPanel,
    CorrelationMatrix,
    SignVector,
    canonicalize_signs,
    deform_correlation,
    load_panel,
    pairwise_correlation,
    regress_out,
)
from .spectral import (
    SpectralSummary,
    TurnoverInputs,
    gamma_diagnostic,
    spectral_summary,
    turnover_estimate,
)
from .factor_model import (
    AllocationPlan,
    ClusterSpec,
    EigenStructure,
    FactorModel,
    NonbinaryBound,
    binary_eigensystem,
    build_covariance,
    dense_rho_star,
    nonbinary_bound,
    optimal_allocation,
    reduce_nonbinary,
    reduce_nondiagonal,
    rho_star_binary,
    secular_identity_check,
    secular_roots,
)
from .clusters import (
    ClusterCountEstimate,
    FTestReport,
    SweepCurve,
    knee_estimate,
    lower_bound_F,
    new_cluster_ftest,
    residual_correlation_sweep,
)
from .synth import SynthConfig, gen_cluster_spec, gen_factor_correlation, gen_model, gen_panel

__version__ = "0.1.0"
