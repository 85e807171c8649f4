"""Constrained mixtures of generalized normal distributions."""

from .ecm import FitConfig, FitResult, ecm_fit, kmeans_init
from .errors import (
    CmgndError,
    ExperimentError,
    FitFailure,
    InputError,
    ParameterDomainError,
    SelectionFailure,
)
from .family import SelectionReport, enumerate_family, select_by_bic
from .gnd import GndParams, gnd_log_pdf, gnd_pdf, gnd_sample
from .mixture import (
    ConstraintSpec,
    MixtureModel,
    bic,
    free_parameter_count,
    log_likelihood,
    marginal_moments,
    responsibilities,
)

__version__ = "0.1.0"

__all__ = [
    "CmgndError", "ConstraintSpec", "ExperimentError", "FitConfig", "FitFailure", "FitResult",
    "GndParams", "InputError", "MixtureModel", "ParameterDomainError", "SelectionFailure",
    "SelectionReport", "bic", "ecm_fit", "enumerate_family", "free_parameter_count",
    "gnd_log_pdf", "gnd_pdf", "gnd_sample", "kmeans_init", "log_likelihood", "marginal_moments",
    "responsibilities", "select_by_bic",
]
