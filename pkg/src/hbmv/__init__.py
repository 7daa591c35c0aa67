"""Three-level (patient / team / facility) multivariate Bayesian workload model:
Gibbs sampling, DIC model comparison, variance decomposition, HPD summaries,
posterior-predictive forecasts, and synthetic-data tooling."""

from ._version import __version__
from .data import (FacilityRecord, HierarchyIndex, PanelDataset, PatientRecord,
                   TeamRecord, apply_transform, load_dataset, validate_hierarchy,
                   write_dataset)
from .design import (DesignStructure, PredictionContext, build_design,
                     fixed_effect_labels, random_term_labels)
from .diagnostics import (ComparisonReport, ConstraintTest, DicResult, FitSummary,
                          chi_square_deviance_test, compare_models, dic, hpd_interval,
                          icc, level_correlation, summarize)
from .fit import FitResult, fit_model, load_fit, save_fit, spec_hash
from .modelspec import (CoefRef, ModelSpec, PatientPredictor, TeamPredictor,
                        default_ladder)
from .predict import PredictionRequest, PredictiveSummary, posterior_predict
from .sampler import (ChainSamples, LevelPrior, McmcConfig, ParameterState, Priors,
                      deviance, gibbs_step, init_state, run_chain, run_chains)
from .synthetic import (CovariateModel, EffectsLedger, GroundTruth, RecoveryReport,
                        generate, recovery_report)

__all__ = [
    "__version__",
    "FacilityRecord", "TeamRecord", "PatientRecord", "PanelDataset", "HierarchyIndex",
    "load_dataset", "write_dataset", "validate_hierarchy", "apply_transform",
    "ModelSpec", "PatientPredictor", "TeamPredictor", "CoefRef", "default_ladder",
    "DesignStructure", "PredictionContext", "build_design",
    "fixed_effect_labels", "random_term_labels",
    "Priors", "LevelPrior", "McmcConfig", "ParameterState", "ChainSamples",
    "init_state", "gibbs_step", "run_chain", "run_chains", "deviance",
    "hpd_interval", "dic", "icc", "level_correlation", "compare_models",
    "chi_square_deviance_test", "summarize",
    "DicResult", "FitSummary", "ComparisonReport", "ConstraintTest",
    "PredictionRequest", "PredictiveSummary", "posterior_predict",
    "GroundTruth", "CovariateModel", "EffectsLedger", "RecoveryReport",
    "generate", "recovery_report",
    "FitResult", "fit_model", "save_fit", "load_fit", "spec_hash",
]
