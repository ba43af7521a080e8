"""FDR-controlled feature selection for Cox survival models via knockoffs."""

from .coxnet import (
    CoxLassoFit,
    SurvivalDataset,
    cross_validate,
    default_lambda_grid,
    fit_path,
    gradient,
    hessian_quadratic,
    partial_loglik,
    standardize_design,
)
from .filter import (
    KnockoffStats,
    SelectionResult,
    TruthMetrics,
    flip_sign_check,
    knockoff_threshold,
    lcd_statistics,
    score,
)
from .knockoffs import (
    AugmentedDesign,
    KnockoffSampler,
    MomentModel,
    build_sampler,
    equicorrelated_s,
    fit_moments,
    sample_knockoffs,
)
from .simbench import (
    Scenario,
    ScenarioReport,
    aggregate_report,
    calibrate_censoring,
    gen_covariates,
    gen_survival,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedDesign",
    "CoxLassoFit",
    "KnockoffSampler",
    "KnockoffStats",
    "MomentModel",
    "Scenario",
    "ScenarioReport",
    "SelectionResult",
    "SurvivalDataset",
    "TruthMetrics",
    "aggregate_report",
    "build_sampler",
    "calibrate_censoring",
    "cross_validate",
    "default_lambda_grid",
    "equicorrelated_s",
    "fit_moments",
    "fit_path",
    "flip_sign_check",
    "gen_covariates",
    "gen_survival",
    "gradient",
    "hessian_quadratic",
    "knockoff_threshold",
    "lcd_statistics",
    "partial_loglik",
    "run_scenario",
    "sample_knockoffs",
    "score",
    "standardize_design",
]
