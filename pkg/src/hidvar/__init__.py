"""Estimating the structural matrix of a partially observed VAR(1) whose
hidden channels act as confounders."""

from .cov_estimator import estimate_cov, enumerate_solvents, solve_ansatz
from .granger import practical_granger, practical_granger_sample
from .harness import ExperimentConfig, best_candidate, match_c_columns, rmse, run_experiment
from .model_check import check_model, ks_gaussianity, residual_independence
from .var_core import (
    GmmNoiseModel,
    TimeSeriesSample,
    VarParams,
    analytic_autocov,
    sample_autocov,
    sample_stable_var,
    simulate,
)
from .vem import VemConfig, fit as fit_vem

__all__ = [
    "ExperimentConfig",
    "GmmNoiseModel",
    "TimeSeriesSample",
    "VarParams",
    "VemConfig",
    "analytic_autocov",
    "best_candidate",
    "check_model",
    "enumerate_solvents",
    "estimate_cov",
    "fit_vem",
    "ks_gaussianity",
    "match_c_columns",
    "practical_granger",
    "practical_granger_sample",
    "residual_independence",
    "rmse",
    "run_experiment",
    "sample_autocov",
    "sample_stable_var",
    "simulate",
    "solve_ansatz",
]
