"""Limit quantities S, V, W_1, W_2, the efficient bound and their data estimators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .conditions import y_derivatives
from .estfun import EstimatingFunction
from .exceptions import QuadratureError
from .model import DiffusionModel, as_param, stationary_integrate

RTOL = 1e-8


def scaling_matrix(n: int, delta: float) -> np.ndarray:
    """``D_n = diag(1 / sqrt(n delta), 1 / (delta sqrt(n)))``."""
    if n < 1 or not delta > 0:
        raise ValueError("need n >= 1 and delta > 0")
    return np.diag([1.0 / math.sqrt(n * delta), 1.0 / (delta * math.sqrt(n))])


def _matrix(a) -> list:
    return None if a is None else np.asarray(a, dtype=float).tolist()


@dataclass
class AsymptoticsReport:
    S: np.ndarray
    V: np.ndarray
    W1: float
    W2: float
    cov_general: np.ndarray | None
    cov_rate_optimal: np.ndarray
    sigma_bound: np.ndarray

    def to_dict(self) -> dict:
        return {
            "S": _matrix(self.S),
            "V": _matrix(self.V),
            "W1": self.W1,
            "W2": self.W2,
            "cov_general": _matrix(self.cov_general),
            "cov_rate_optimal": _matrix(self.cov_rate_optimal),
            "sigma_bound": _matrix(self.sigma_bound),
        }


def _integrand(ef, model, theta, theta0):
    """Stacked integrands for S (4), V (4), W2 (1) at a scalar x."""

    def func(x):
        x = np.asarray([x], dtype=float)
        d1, d2 = y_derivatives(ef, x, theta)
        d1, d2 = d1[:, 0], d2[:, 0]
        db = float(model.db_dalpha(x, theta)[0])
        dv = float(model.dv_dbeta(x, theta)[0])
        v0 = float(model.v(x, theta0)[0])
        v = float(model.v(x, theta)[0])
        J = np.array([[db * d1[0], 0.5 * dv * d2[0]], [db * d1[1], 0.5 * dv * d2[1]]])
        V = v0 * np.outer(d1, d1)
        w2 = 0.5 * (v0 * v0 + 0.5 * (v0 - v) ** 2) * d2[1] ** 2
        return np.concatenate([J.ravel(), V.ravel(), [w2]])

    return func


def efficient_bound(model: DiffusionModel, theta0) -> np.ndarray:
    """Diagonal efficient covariance ``Sigma(theta_0)``."""
    theta0 = as_param(theta0)

    def func(x):
        x = np.asarray([x], dtype=float)
        v = model.v(x, theta0)[0]
        return np.array([model.db_dalpha(x, theta0)[0] ** 2 / v, (model.dv_dbeta(x, theta0)[0] / v) ** 2])

    info = stationary_integrate(model, theta0, func, rtol=RTOL)
    if np.any(info <= 0):
        raise ZeroDivisionError("zero Fisher information: the drift or diffusion does not depend on its parameter")
    return np.diag([1.0 / info[0], 2.0 / info[1]])


def theoretical_asymptotics(ef: EstimatingFunction, model: DiffusionModel, theta, theta0=None) -> AsymptoticsReport:
    """Limit matrices by quadrature against the stationary law at ``theta0``.

    ``cov_general`` is ``S^-1 V S^-T``; it is ``None`` (with a warning) when S
    is singular, which happens for estimating functions that cannot identify
    both parameters.
    """
    theta = as_param(theta)
    theta0 = theta if theta0 is None else as_param(theta0)
    vals = stationary_integrate(model, theta0, _integrand(ef, model, theta, theta0), rtol=RTOL)
    S = vals[:4].reshape(2, 2)
    V = vals[4:8].reshape(2, 2)
    V = 0.5 * (V + V.T)
    W1, W2 = float(V[0, 0]), float(vals[8])
    cov_general = None
    if abs(np.linalg.det(S)) > 1e-12 * max(1.0, np.max(np.abs(S))) ** 2:
        Sinv = np.linalg.inv(S)
        cov_general = Sinv @ V @ Sinv.T
        cov_general = 0.5 * (cov_general + cov_general.T)
    else:
        warnings.warn("S is singular; the general asymptotic covariance is not defined", RuntimeWarning,
                      stacklevel=2)
    with np.errstate(divide="ignore"):
        rate = np.diag([W1 / S[0, 0] ** 2 if S[0, 0] else math.inf, W2 / S[1, 1] ** 2 if S[1, 1] else math.inf])
    return AsymptoticsReport(S, V, W1, W2, cov_general, rate, efficient_bound(model, theta0))


def gamma_curve(ef: EstimatingFunction, model: DiffusionModel, theta0, thetas) -> np.ndarray:
    """Identifiability function ``gamma(theta, theta_0)`` for each theta, shape (len, 2)."""
    theta0 = as_param(theta0)
    out = []
    for theta in thetas:
        theta = as_param(theta)

        def func(x, theta=theta):
            xa = np.asarray([x], dtype=float)
            d1, d2 = y_derivatives(ef, xa, theta)
            db = model.b(xa, theta0)[0] - model.b(xa, theta)[0]
            dv = model.v(xa, theta0)[0] - model.v(xa, theta)[0]
            return db * d1[:, 0] + 0.5 * dv * d2[:, 0]

        out.append(stationary_integrate(model, theta0, func, rtol=RTOL))
    return np.array(out)


@dataclass
class EmpiricalCovariance:
    S_hat: np.ndarray
    V_or_W_hat: np.ndarray
    cov_hat: np.ndarray
    mode: str

    def standard_errors(self, n: int, delta: float) -> np.ndarray:
        """Unscaled standard errors of (alpha_hat, beta_hat)."""
        d = np.sqrt(np.diag(self.cov_hat))
        if self.mode == "general":
            return d / math.sqrt(n * delta)
        return d * np.array([1.0 / math.sqrt(n * delta), 1.0 / math.sqrt(n)])

    def to_dict(self):
        return {"S_hat": _matrix(self.S_hat), "V_or_W_hat": _matrix(self.V_or_W_hat),
                "cov_hat": _matrix(self.cov_hat), "mode": self.mode}


def empirical_covariance(ef: EstimatingFunction, path, theta_hat, mode: str = "rate-optimal") -> EmpiricalCovariance:
    """Sandwich estimators from the data at ``theta_hat``.

    General mode returns the covariance of ``sqrt(n delta)(theta_hat - theta_0)``;
    rate-optimal mode the diagonal covariance of
    ``(sqrt(n delta)(alpha_hat - alpha_0), sqrt(n)(beta_hat - beta_0))``.
    """
    if mode not in ("general", "rate-optimal"):
        raise ValueError(f"mode must be 'general' or 'rate-optimal', got {mode!r}")
    x, y, n, delta = path.x, path.y, path.n, path.delta
    g = ef(delta, y, x, theta_hat)
    jac = ef.jac_theta(delta, y, x, theta_hat)
    S_hat = -jac.sum(axis=-1) / (n * delta)
    outer = g @ g.T
    if mode == "general":
        V_hat = outer / (n * delta)
        try:
            Sinv = np.linalg.inv(S_hat)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("empirical sensitivity matrix is singular") from exc
        cov = Sinv @ V_hat @ Sinv.T
        return EmpiricalCovariance(S_hat, V_hat, 0.5 * (cov + cov.T), mode)
    D = scaling_matrix(n, delta)
    W_hat = D @ outer @ D
    if S_hat[0, 0] == 0 or S_hat[1, 1] == 0:
        raise np.linalg.LinAlgError("empirical sensitivity matrix has a zero diagonal entry")
    cov = np.diag([W_hat[0, 0] / S_hat[0, 0] ** 2, W_hat[1, 1] / S_hat[1, 1] ** 2])
    return EmpiricalCovariance(S_hat, W_hat, cov, mode)


__all__ = [
    "AsymptoticsReport",
    "EmpiricalCovariance",
    "QuadratureError",
    "efficient_bound",
    "empirical_covariance",
    "gamma_curve",
    "scaling_matrix",
    "theoretical_asymptotics",
]
