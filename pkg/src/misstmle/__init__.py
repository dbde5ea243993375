"""TMLE estimation of average causal effects under missing data.

Submodules: core (data model, RNG streams), datagen (simulated cohorts),
learners (base algorithms), stacking (super learner), tmle (the estimator),
missing (the eight missing-data strategies), harness/report (Monte Carlo
study), cli (command line).
"""

from .core import Dataset, RngStream, complete_cases, logit, logit_inv
from .missing import METHOD_LABELS, METHODS, ImputationSpec, estimate, mi_estimate, rubin_pool
from .stacking import EnsembleModel, fit_superlearner
from .tmle import EstimateResult, TmleConfig, tmle_ate, tmle_ate_extended

__all__ = [
    "Dataset", "RngStream", "complete_cases", "logit", "logit_inv",
    "METHODS", "METHOD_LABELS", "ImputationSpec", "estimate", "mi_estimate", "rubin_pool",
    "EnsembleModel", "fit_superlearner",
    "EstimateResult", "TmleConfig", "tmle_ate", "tmle_ate_extended",
]

__version__ = "0.1.0"
