"""Tempered fractional Vasicek model: TFBM simulation, drift estimation and limit-law constants."""

from .asymptotics import (
    AsymptoticConstants,
    LimitLawParams,
    beta_squared,
    beta_squared_hypergeometric,
    beta_squared_quadrature,
    finite_T_second_moments,
    limit_law_params,
    sample_limit_laws,
    sigma_matrix,
)
from .errors import (
    DegenerateDenominatorError,
    FactorizationError,
    FallbackRequired,
    NumericalError,
    QuadratureError,
    TfvError,
    ValidationError,
)
from .montecarlo import ExperimentConfig, ExperimentReport, ks_one_sample, ks_two_sample, run_experiment, verify_theorem
from .tfbm import PathSet, SampleGrid, TfbmParams, alpha_squared, covariance, covariance_matrix, sample_paths, variance
from .vasicek import EstimateResult, VasicekParams, auxiliary_zuv, estimate_drift, limit_summands, simulate_vasicek

__version__ = "0.1.0"
