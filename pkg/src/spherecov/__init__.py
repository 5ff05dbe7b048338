"""Nonparametric mean and covariance estimation for sparsely sampled spherical random fields."""

__version__ = "0.1.0"

from .estimators import (
    MeanEstimate,
    SecondMomentEstimate,
    SolverConfig,
    conjugate_gradient,
    eval_covariance,
    eval_mean,
    eval_second_moment,
    fit_lag_autocov,
    fit_mean,
    fit_second_moment,
)
from .fields import Dataset, SourceModel, default_source_model, simulate_dataset, simulate_far1
from .kernels import matern_zonal, sobolev_operator, green_kernel_dstar_d
from .model_selection import CVConfig, kfold_cv_second_moment
from .postprocess import GridField, eval_on_grid, l2_error, project_psd
from .sphere import SphereGrid, fibonacci_grid, sample_uniform_sphere

__all__ = [
    "CVConfig",
    "Dataset",
    "GridField",
    "MeanEstimate",
    "SecondMomentEstimate",
    "SolverConfig",
    "SourceModel",
    "SphereGrid",
    "conjugate_gradient",
    "default_source_model",
    "eval_covariance",
    "eval_mean",
    "eval_on_grid",
    "eval_second_moment",
    "fibonacci_grid",
    "fit_lag_autocov",
    "fit_mean",
    "fit_second_moment",
    "green_kernel_dstar_d",
    "kfold_cv_second_moment",
    "l2_error",
    "matern_zonal",
    "project_psd",
    "sample_uniform_sphere",
    "simulate_dataset",
    "simulate_far1",
    "sobolev_operator",
]
