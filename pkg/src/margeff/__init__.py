"""Plug-in GLM estimation of marginal treatment effects, prognostic-score
adjustment from historical controls, and misspecification-robust power."""

from .errors import (
    ConvergenceError,
    DataError,
    EstimandError,
    EstimationWarning,
    FormulaError,
    LearnerError,
    MargeffError,
    ModelFitError,
    PowerError,
    RankDeficientError,
    SupportError,
)
from .estimand import EstimandSpec, builtin, from_expression, numeric_derivatives, solve_psi1
from .formula import (
    DesignMatrix,
    Formula,
    build_design,
    format_formula,
    parse_formula,
    parse_linear_predictor,
)
from .glm import Family, GlmFit, estimate_nb_theta, fit_glm, irls_fit, predict_mean
from .learners import LearnerSpec, SuperLearnerFit, default_learners, fit_best_learner, fit_learner
from .plugin import (
    InfluenceComponents,
    MarginalEffectEstimate,
    TrialData,
    counterfactual_means,
    cv_if_variance,
    estimate_marginal_effect,
    if_variance,
    influence_components,
)
from .power import (
    PowerInputs,
    PowerResult,
    estimate_nuisances,
    power_marginaleffect,
    repeat_power_curve,
    samplesize_for_power,
    variance_bound,
)
from .prognostic import (
    AdjustedEstimate,
    PrognosticFit,
    default_prog_formula,
    estimate_with_prognostic_score,
    transform_score,
)
from .simulate import SimSpec, glm_data, make_spec, recover_coefficients_check

__version__ = "0.1.0"

__all__ = [
    "AdjustedEstimate",
    "ConvergenceError",
    "DataError",
    "DesignMatrix",
    "EstimandError",
    "EstimandSpec",
    "EstimationWarning",
    "Family",
    "Formula",
    "FormulaError",
    "GlmFit",
    "InfluenceComponents",
    "LearnerError",
    "LearnerSpec",
    "MargeffError",
    "MarginalEffectEstimate",
    "ModelFitError",
    "PowerError",
    "PowerInputs",
    "PowerResult",
    "PrognosticFit",
    "RankDeficientError",
    "SimSpec",
    "SuperLearnerFit",
    "SupportError",
    "TrialData",
    "build_design",
    "builtin",
    "counterfactual_means",
    "cv_if_variance",
    "default_learners",
    "default_prog_formula",
    "estimate_marginal_effect",
    "estimate_nb_theta",
    "estimate_nuisances",
    "estimate_with_prognostic_score",
    "fit_best_learner",
    "fit_glm",
    "fit_learner",
    "format_formula",
    "from_expression",
    "glm_data",
    "if_variance",
    "influence_components",
    "irls_fit",
    "make_spec",
    "numeric_derivatives",
    "parse_formula",
    "parse_linear_predictor",
    "power_marginaleffect",
    "predict_mean",
    "recover_coefficients_check",
    "repeat_power_curve",
    "samplesize_for_power",
    "solve_psi1",
    "transform_score",
    "variance_bound",
]
