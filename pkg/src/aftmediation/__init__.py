"""Causal mediation analysis for censored and truncated survival outcomes under AFT models."""

__version__ = "0.1.0"

from .aft import (
    AftFit,
    AftSpec,
    FitError,
    LinearFit,
    RankDeficientError,
    fit,
    fit_linear,
    loglik,
    score,
)
from .distributions import (
    Convolved,
    DegenerateConvolutionError,
    ErrorLaw,
    ExtremeValueMin,
    StandardNormal,
)
from .estimators import AFTMediation, AFTRegressor
from .mediation import BootstrapConfig, MediationEstimates, analyze, bootstrap
from .survdata import (
    Dataset,
    DataValidationError,
    Schema,
    SurvivalOutcome,
    read_csv,
    summarize,
    write_csv,
)

__all__ = [
    "AFTMediation", "AFTRegressor", "AftFit", "AftSpec", "BootstrapConfig", "Convolved", "DataValidationError",
    "Dataset", "DegenerateConvolutionError", "ErrorLaw", "ExtremeValueMin", "FitError", "LinearFit",
    "MediationEstimates", "RankDeficientError", "Schema", "StandardNormal", "SurvivalOutcome", "analyze",
    "bootstrap", "fit", "fit_linear", "loglik", "read_csv", "score", "summarize", "write_csv",
]
