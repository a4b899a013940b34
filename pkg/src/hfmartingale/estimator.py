"""Scikit-learn style front end: ``MartingaleEstimator().fit(observations)``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_delta, check_path_values, check_theta
from .estfun import CATALOG, make_estimating_function
from .inference import empirical_covariance, scaling_matrix
from .model import builtin_model
from .simulate import SamplePath
from .solve import SolveSettings, solve_estimating_equation


class MartingaleEstimator(BaseEstimator):
    """Fit (alpha, beta) of a builtin diffusion from equidistant observations.

    Parameters
    ----------
    model : {"ou", "cir"}
    estimator : catalog name of the estimating function
    delta : sampling step between observations
    start : initial (alpha, beta) for the Newton solver
    model_options : fixed model constants, e.g. ``{"m0": 1.0}`` for CIR
    estimator_options : passed to the catalog constructor
    covariance : "rate-optimal" or "general" sandwich estimator
    tol : tolerance on the normalized estimating equation
    max_iter : Newton iterations per start

    Attributes
    ----------
    alpha_, beta_ : estimates
    theta_ : (alpha_, beta_)
    covariance_ : covariance of the standardized errors
    stderr_ : unscaled standard errors of (alpha_, beta_)
    g_norm_ : max-norm of the normalized estimating function at the root
    n_iter_ : Newton iterations of the accepted start
    """

    def __init__(self, model="ou", estimator="quad-exact-efficient", delta=1.0, start=(1.0, 1.0),
                 model_options=None, estimator_options=None, covariance="rate-optimal", tol=1e-8, max_iter=100):
        self.model = model
        self.estimator = estimator
        self.delta = delta
        self.start = start
        self.model_options = model_options
        self.estimator_options = estimator_options
        self.covariance = covariance
        self.tol = tol
        self.max_iter = max_iter

    def _build(self):
        if self.estimator not in CATALOG:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {CATALOG}")
        if self.covariance not in ("rate-optimal", "general"):
            raise ValueError("covariance must be 'rate-optimal' or 'general'")
        model = builtin_model(self.model, self.model_options)
        return model, make_estimating_function(self.estimator, model, **(self.estimator_options or {}))

    def fit(self, X, y=None):
        values = check_path_values(X)
        delta = check_delta(self.delta)
        start = check_theta(self.start, "start")
        model, ef = self._build()
        path = SamplePath(values, delta)
        est = solve_estimating_equation(ef, path, SolveSettings(start=tuple(start), tol_g=self.tol,
                                                                max_iter=self.max_iter))
        cov = empirical_covariance(ef, path, est.theta_hat, self.covariance)
        self.ef_ = ef
        self.model_ = model
        self.estimate_ = est
        self.theta_ = est.theta_hat
        self.alpha_, self.beta_ = est.theta_hat
        self.covariance_ = cov.cov_hat
        self.stderr_ = cov.standard_errors(path.n, delta)
        self.g_norm_ = est.g_norm
        self.n_iter_ = est.iterations
        self.n_observations_ = values.size
        return self

    def estimating_equation(self, X, theta=None):
        """Normalized ``D_n G_n(theta)`` on new observations (defaults to the fitted theta)."""
        check_is_fitted(self, "theta_")
        values = check_path_values(X)
        path = SamplePath(values, check_delta(self.delta))
        theta = self.theta_ if theta is None else check_theta(theta)
        g = self.ef_(path.delta, path.y, path.x, theta).sum(axis=-1)
        return np.diag(scaling_matrix(path.n, path.delta)) * g
