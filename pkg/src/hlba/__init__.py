"""Hierarchical Linear Ballistic Accumulator models fitted by particle
Metropolis-within-Gibbs and density-tempered SMC, with evidence estimates."""

__version__ = "0.1.0"

from .data import TrialData, TrialObservation, load_trials, save_trials
from .dtsmc import ParticleCloud, SmcConfig, run_dtsmc
from .errors import DataValidationError, DegenerateWeightsError, HlbaError, ParameterDomainError
from .lba import NaturalLbaParams, lba_cdf, lba_joint_logdensity, lba_pdf, subject_loglik
from .likelihood import LbaLikelihood
from .marglik import TemperTrace, logml_standard, logml_ti1, logml_ti2, ti_from_pmwg
from .model import GroupParams, HyperConfig, ModelDesign, reference_group_params
from .pmwg import ChainOutput, PmwgConfig, run_pmwg
from .simulate import ExperimentDesign, simulate_dataset, simulate_trial

__all__ = [
    "ChainOutput", "DataValidationError", "DegenerateWeightsError", "ExperimentDesign", "GroupParams",
    "HlbaError", "HyperConfig", "LbaLikelihood", "ModelDesign", "NaturalLbaParams", "ParameterDomainError",
    "ParticleCloud", "PmwgConfig", "SmcConfig", "TemperTrace", "TrialData", "TrialObservation", "lba_cdf",
    "lba_joint_logdensity", "lba_pdf", "load_trials", "logml_standard", "logml_ti1", "logml_ti2",
    "reference_group_params", "run_dtsmc", "run_pmwg", "save_trials", "simulate_dataset", "simulate_trial",
    "subject_loglik", "ti_from_pmwg",
]
