"""Mixed correlation matrices (Pearson, polyserial, polychoric) by iterative GMM."""

from . import errors
from .estimator import (
    COV_CORRECTED,
    COV_PAPER,
    ONE_STEP,
    TWO_STEP,
    Diagnostics,
    EstimationResult,
    FitConfig,
    compute_sigma,
    estimate_thresholds,
    fit,
    fit_one_step,
    fit_two_step,
    minimize_loss,
)
from .model import (
    CorrelationParams,
    MixedDataset,
    ParamVector,
    ThresholdSet,
    VariableSpec,
    ingest,
    param_count,
)
from .moments import (
    CUSTOM,
    MAX_SET,
    MIN_SET,
    EquationSystem,
    MomentEvaluation,
    WeightMatrix,
    assemble_gradient,
    build_system,
    eval_moments,
    eval_u,
    weight_matrix,
)
from .normal import (
    LegendreOrder,
    binorm_cdf_legendre,
    binorm_cdf_oracle,
    binorm_pdf,
    norm_cdf,
    norm_pdf,
    norm_quantile,
)
from .simulation import SimDesign, SimReport, generate, ml_pair_oracle, run_study

__version__ = "0.1.0"

__all__ = [
    "errors",
    "COV_CORRECTED",
    "COV_PAPER",
    "ONE_STEP",
    "TWO_STEP",
    "Diagnostics",
    "EstimationResult",
    "FitConfig",
    "compute_sigma",
    "estimate_thresholds",
    "fit",
    "fit_one_step",
    "fit_two_step",
    "minimize_loss",
    "CorrelationParams",
    "MixedDataset",
    "ParamVector",
    "ThresholdSet",
    "VariableSpec",
    "ingest",
    "param_count",
    "CUSTOM",
    "MAX_SET",
    "MIN_SET",
    "EquationSystem",
    "MomentEvaluation",
    "WeightMatrix",
    "assemble_gradient",
    "build_system",
    "eval_moments",
    "eval_u",
    "weight_matrix",
    "LegendreOrder",
    "binorm_cdf_legendre",
    "binorm_cdf_oracle",
    "binorm_pdf",
    "norm_cdf",
    "norm_pdf",
    "norm_quantile",
    "SimDesign",
    "SimReport",
    "generate",
    "ml_pair_oracle",
    "run_study",
]
