"""Approximate martingale estimating functions for diffusions observed at high frequency."""

from .conditions import (
    ConditionReport,
    check_efficiency,
    check_rate_optimality,
    probe_martingale_order,
    verify_lemma1,
)
from .estfun import (
    CATALOG,
    BasisFunctions,
    EstimatingFunction,
    efficient_quadratic_weights,
    efficient_weights,
    eval_G,
    euler_ef,
    gh_general_ef,
    gh_optimal_general,
    gh_optimal_quadratic,
    local_gaussian_score_ef,
    make_estimating_function,
    non_rate_optimal_ef,
    polynomial_basis,
    polynomial_weights,
    quadratic_ef,
)
from .estimator import MartingaleEstimator
from .exceptions import (
    ConfigurationWarning,
    MissingMomentsError,
    NoConvergence,
    QuadratureError,
    SingularJacobian,
    SingularWeightsError,
    StateSpaceError,
)
from .harness import ExperimentConfig, MCReport, rate_scan, run_experiment, summarize
from .inference import (
    AsymptoticsReport,
    EmpiricalCovariance,
    efficient_bound,
    empirical_covariance,
    gamma_curve,
    scaling_matrix,
    theoretical_asymptotics,
)
from .model import (
    CoxIngersollRoss,
    DiffusionModel,
    OrnsteinUhlenbeck,
    ParamPoint,
    ScalarField,
    StateInterval,
    apply_generator,
    builtin_model,
    stationary_density,
    stationary_expectation,
)
from .simulate import SamplePath, SamplingRule, sampling_schedule, simulate_path
from .solve import Estimate, SolveSettings, solve_estimating_equation

__version__ = "0.1.0"

__all__ = [
    "ConditionReport",
    "check_efficiency",
    "check_rate_optimality",
    "probe_martingale_order",
    "verify_lemma1",
    "CATALOG",
    "BasisFunctions",
    "EstimatingFunction",
    "efficient_quadratic_weights",
    "efficient_weights",
    "eval_G",
    "euler_ef",
    "gh_general_ef",
    "gh_optimal_general",
    "gh_optimal_quadratic",
    "local_gaussian_score_ef",
    "make_estimating_function",
    "non_rate_optimal_ef",
    "polynomial_basis",
    "polynomial_weights",
    "quadratic_ef",
    "MartingaleEstimator",
    "ConfigurationWarning",
    "MissingMomentsError",
    "NoConvergence",
    "QuadratureError",
    "SingularJacobian",
    "SingularWeightsError",
    "StateSpaceError",
    "ExperimentConfig",
    "MCReport",
    "rate_scan",
    "run_experiment",
    "summarize",
    "AsymptoticsReport",
    "EmpiricalCovariance",
    "efficient_bound",
    "empirical_covariance",
    "gamma_curve",
    "scaling_matrix",
    "theoretical_asymptotics",
    "CoxIngersollRoss",
    "DiffusionModel",
    "OrnsteinUhlenbeck",
    "ParamPoint",
    "ScalarField",
    "StateInterval",
    "apply_generator",
    "builtin_model",
    "stationary_density",
    "stationary_expectation",
    "SamplePath",
    "SamplingRule",
    "sampling_schedule",
    "simulate_path",
    "Estimate",
    "SolveSettings",
    "solve_estimating_equation",
]
