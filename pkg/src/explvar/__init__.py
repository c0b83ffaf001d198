"""Explained-variation estimation for high-dimensional linear models.

Point estimators (spectral-weight and least-squares), normality-free
variance estimates with confidence intervals, and a reproducible
Monte-Carlo harness for coverage studies.
"""

__version__ = "0.1.0"

from .data import (
    CorrelationModel,
    Dataset,
    SpectralGram,
    centered_gram,
    decorrelate,
    estimate_correlation,
    expand_interactions,
    load_csv,
    standardize,
    standardize_outcome,
)
from .errors import DataError, NumericError
from .estimator import (
    ExplainedVariationEstimate,
    LeastSquares,
    ResidualProjector,
    RidgeSpectral,
    WeightDiagnostics,
    WeightScheme,
    estimate_r2_ls,
    estimate_r2_weighted,
    iterate_lambda,
    ls_projector,
    weight_diagonals,
    weight_eigenvalues,
)
from .simulation import (
    ChiSquare1,
    Correlated,
    Exponential,
    Independent,
    MethodSpec,
    NormalPower,
    ScenarioConfig,
    ScenarioReport,
    gen_design,
    gen_outcome,
    parse_scenario,
    power_transform,
    run_scenario,
)
from .variance import (
    IntervalReport,
    MpLaw,
    VarianceMethod,
    chi_square_interval,
    mp_tau2_theoretical,
    normal_interval,
    tau2_hat,
    var_ls,
    var_normal_error,
    var_null,
    var_robust,
)

__all__ = [
    "__version__",
    "CorrelationModel", "Dataset", "SpectralGram",
    "centered_gram", "decorrelate", "estimate_correlation", "expand_interactions",
    "load_csv", "standardize", "standardize_outcome",
    "DataError", "NumericError",
    "ExplainedVariationEstimate", "LeastSquares", "ResidualProjector",
    "RidgeSpectral", "WeightDiagnostics", "WeightScheme",
    "estimate_r2_ls", "estimate_r2_weighted", "iterate_lambda", "ls_projector",
    "weight_diagonals", "weight_eigenvalues",
    "ChiSquare1", "Correlated", "Exponential", "Independent", "MethodSpec",
    "NormalPower", "ScenarioConfig", "ScenarioReport",
    "gen_design", "gen_outcome", "parse_scenario", "power_transform", "run_scenario",
    "IntervalReport", "MpLaw", "VarianceMethod",
    "chi_square_interval", "mp_tau2_theoretical", "normal_interval", "tau2_hat",
    "var_ls", "var_normal_error", "var_null", "var_robust",
]
