"""Estimating functions g(delta, y, x; theta) and their constructors.

Every constructor bakes in the canonical version, i.e. the normalization of
the second coordinate under which the rate and efficiency conditions are
stated at delta = 0:

    d_y g_2(0, x, x) = 0,
    d_y g_1(0, x, x) = d_alpha b / v,
    d_y^2 g_2(0, x, x) = d_beta v / v^2.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Callable

import numpy as np

from . import _jets
from .exceptions import MissingMomentsError, SingularWeightsError
from .model import (
    MAX_GENERATOR_ORDER,
    DiffusionModel,
    ScalarField,
    as_param,
    generator_powers,
    transition_expansion,
)

CATALOG = (
    "quad-exact-efficient",
    "quad-expansion-k2",
    "euler",
    "gh-quadratic",
    "gh-general",
    "local-gaussian",
    "non-rate-control",
)

_THETA_STEP = 1e-6
_GH_T, _GH_W = np.polynomial.hermite.hermgauss(32)
_GH_W = _GH_W / np.sqrt(np.pi)


class EstimatingFunction:
    """Evaluable 2-vector ``g(delta, y, x; theta)`` with its theta-Jacobian.

    ``func`` and ``jac`` are vectorized over ``y`` and ``x``; ``func`` returns
    shape ``(2, ...)`` and ``jac`` shape ``(2, 2, ...)`` with axis 0 the
    coordinate of g and axis 1 the parameter.  Without ``jac`` the Jacobian is
    taken by central differences in theta.
    """

    def __init__(self, func: Callable, jac: Callable | None = None, kappa="exact", version_note: str = "",
                 name: str = "", model: DiffusionModel | None = None):
        if kappa != "exact" and (not isinstance(kappa, (int, np.integer)) or kappa < 1):
            raise ValueError(f"kappa must be a positive integer or 'exact', got {kappa!r}")
        self.func = func
        self._jac = jac
        self.kappa = kappa
        self.version_note = version_note
        self.name = name or "custom"
        self.model = model

    @property
    def is_martingale(self) -> bool:
        return self.kappa == "exact"

    @property
    def has_analytic_jacobian(self) -> bool:
        return self._jac is not None

    def __call__(self, delta, y, x, theta) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.asarray(self.func(float(delta), y, x, as_param(theta)), dtype=float)

    eval = __call__

    def jac_theta(self, delta, y, x, theta) -> np.ndarray:
        if self._jac is None:
            return self.fd_jac_theta(delta, y, x, theta)
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.asarray(self._jac(float(delta), y, x, as_param(theta)), dtype=float)

    def fd_jac_theta(self, delta, y, x, theta) -> np.ndarray:
        theta = np.asarray(as_param(theta), dtype=float)
        cols = []
        for k in range(2):
            h = _THETA_STEP * max(1.0, abs(theta[k]))
            up, dn = theta.copy(), theta.copy()
            up[k] += h
            dn[k] -= h
            cols.append((self(delta, y, x, up) - self(delta, y, x, dn)) / (2 * h))
        return np.stack(cols, axis=1)

    def scaled(self, c1: float, c2: float) -> "EstimatingFunction":
        """Version with coordinates multiplied by nonzero constants."""
        scale = np.array([c1, c2], dtype=float)

        def func(delta, y, x, theta):
            g = self.func(delta, y, x, theta)
            return g * scale.reshape((2,) + (1,) * (np.ndim(g) - 1))

        jac = None
        if self._jac is not None:
            def jac(delta, y, x, theta):
                j = self._jac(delta, y, x, theta)
                return j * scale.reshape((2, 1) + (1,) * (np.ndim(j) - 2))

        return EstimatingFunction(func, jac, self.kappa, self.version_note + f"; scaled by ({c1}, {c2})",
                                  self.name, self.model)

    def __repr__(self):
        return f"EstimatingFunction(name={self.name!r}, kappa={self.kappa!r})"


def eval_G(ef: EstimatingFunction, path, theta) -> np.ndarray:
    """Unnormalized sum of ``g`` over the transitions of ``path``."""
    values = np.asarray(path.values, dtype=float)
    if values.size < 2:
        raise ValueError("path needs at least two observations")
    if ef.model is not None:
        ef.model.interval.check(values, closed=True, what="observation")
    return np.sum(ef(path.delta, values[1:], values[:-1], theta), axis=-1)


def eval_jac_G(ef: EstimatingFunction, path, theta) -> np.ndarray:
    values = np.asarray(path.values, dtype=float)
    return np.sum(ef.jac_theta(path.delta, values[1:], values[:-1], theta), axis=-1)


# -- weights -------------------------------------------------------------------
class QuadraticWeights:
    """Weights ``(a_1, a_2)`` as functions of ``(x, delta, theta)``.

    ``jac`` optionally returns the theta-partials with shape ``(2, 2, ...)``
    (weight index first, parameter second).
    """

    def __init__(self, func: Callable, jac: Callable | None = None, name: str = ""):
        self.func = func
        self.jac = jac
        self.name = name

    def __call__(self, x, delta, theta):
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.func(x, delta, theta), dtype=float)
        return np.broadcast_to(a, (2,) + x.shape) if a.shape != (2,) + x.shape else a


def efficient_quadratic_weights(model: DiffusionModel) -> QuadraticWeights:
    """``a_1 = d_alpha b / v`` and ``a_2 = d_beta v / (2 v^2)``."""

    def func(x, delta, theta):
        v = model.v(x, theta)
        return np.stack([model.db_dalpha(x, theta) / v, model.dv_dbeta(x, theta) / (2 * v * v)])

    def jac(x, delta, theta):
        v = model.v(x, theta)
        db = model.db_dalpha(x, theta)
        dv = model.dv_dbeta(x, theta)
        zero = np.zeros_like(v)
        return np.stack([
            np.stack([model.d2b_dalpha2(x, theta) / v, -db * dv / v**2]),
            np.stack([zero, model.d2v_dbeta2(x, theta) / (2 * v**2) - dv**2 / v**3]),
        ])

    return QuadraticWeights(func, jac, name="efficient")


def polynomial_weights(a1=(1.0,), a2=(1.0,)) -> QuadraticWeights:
    """Theta-free weights given as polynomial coefficients in x (ascending)."""
    p1 = np.polynomial.Polynomial(np.atleast_1d(np.asarray(a1, dtype=float)))
    p2 = np.polynomial.Polynomial(np.atleast_1d(np.asarray(a2, dtype=float)))

    def func(x, delta, theta):
        return np.stack([p1(x) + 0.0 * x, p2(x) + 0.0 * x])

    def jac(x, delta, theta):
        return np.zeros((2, 2) + np.shape(x))

    return QuadraticWeights(func, jac, name=f"poly({list(p1.coef)}, {list(p2.coef)})")


def _as_weights(w) -> QuadraticWeights:
    if isinstance(w, QuadraticWeights):
        return w
    if callable(w):
        return QuadraticWeights(w)
    a1, a2 = w
    return polynomial_weights(np.atleast_1d(a1), np.atleast_1d(a2))


def _bcast(a, ndim):
    return np.asarray(a).reshape(np.shape(a) + (1,) * (ndim - np.ndim(a)))


# -- moments -------------------------------------------------------------------
def _exact_moments(model: DiffusionModel):
    if not model.has_exact_moments:
        raise MissingMomentsError(f"model {model.name!r} has no closed-form conditional moments")


def _check_kappa(kappa):
    if not isinstance(kappa, (int, np.integer)) or kappa < 2:
        raise ValueError(f"expansion order kappa must be an integer >= 2, got {kappa!r}")
    if kappa - 1 > MAX_GENERATOR_ORDER:
        raise ValueError(f"kappa={kappa} needs generator powers above {MAX_GENERATOR_ORDER}")


def expansion_moments(model: DiffusionModel, delta, x, theta, kappa: int):
    """Truncated conditional mean and variance, ``pi^kappa x`` and ``pi^kappa x^2 - F^2``."""
    x = np.asarray(x, dtype=float)
    K = 2 * (kappa - 1)
    mean = transition_expansion(model, theta, _jets.identity(x, K), x, delta, kappa)
    second = transition_expansion(model, theta, _jets.polynomial([0.0, 0.0, 1.0], x, K), x, delta, kappa)
    return mean, second - mean * mean


def quadratic_ef(model: DiffusionModel, weights, moments="exact") -> EstimatingFunction:
    """``(a_1 [y - F], a_2 [(y - F)^2 - phi])`` with exact or expanded moments."""
    w = _as_weights(weights)
    if moments == "exact":
        _exact_moments(model)

        def mom(delta, x, theta):
            return model.cond_mean(delta, x, theta), model.cond_var(delta, x, theta)
        kappa = "exact"
    else:
        _check_kappa(moments)
        kappa = int(moments)

        def mom(delta, x, theta):
            return expansion_moments(model, delta, x, theta, kappa)

    def func(delta, y, x, theta):
        F, phi = mom(delta, x, theta)
        a = w(x, delta, theta)
        r = y - F
        return np.stack([a[0] * r, a[1] * (r * r - phi)])

    jac = None
    if moments == "exact" and w.jac is not None:
        def jac(delta, y, x, theta):
            F = model.cond_mean(delta, x, theta)
            phi = model.cond_var(delta, x, theta)
            dF = model.cond_mean_grad(delta, x, theta)
            dphi = model.cond_var_grad(delta, x, theta)
            a = w(x, delta, theta)
            da = w.jac(x, delta, theta)
            r = y - F
            j1 = da[0] * r - a[0] * dF
            j2 = da[1] * (r * r - phi) + a[1] * (-2.0 * r * dF - dphi)
            return np.stack([j1, j2])

    note = "second coordinate as given; weights carry any delta factors"
    name = f"quadratic[{w.name or 'custom'}, {moments if moments == 'exact' else f'k{moments}'}]"
    return EstimatingFunction(func, jac, kappa, note, name, model)


def euler_ef(model: DiffusionModel) -> EstimatingFunction:
    """Euler pseudo-score, second coordinate multiplied by delta."""

    def parts(delta, y, x, theta):
        b = model.b(x, theta)
        v = model.v(x, theta)
        return b, v, y - x - b * delta

    def func(delta, y, x, theta):
        b, v, r = parts(delta, y, x, theta)
        a1 = model.db_dalpha(x, theta) / v
        a2 = model.dv_dbeta(x, theta) / (2 * v * v)
        return np.stack([a1 * r, a2 * (r * r - v * delta)])

    def jac(delta, y, x, theta):
        b, v, r = parts(delta, y, x, theta)
        db = model.db_dalpha(x, theta)
        dv = model.dv_dbeta(x, theta)
        a1 = db / v
        a2 = dv / (2 * v * v)
        da1 = np.stack([model.d2b_dalpha2(x, theta) / v, -db * dv / v**2])
        da2_beta = model.d2v_dbeta2(x, theta) / (2 * v**2) - dv**2 / v**3
        q = r * r - v * delta
        j1 = np.stack([da1[0] * r - a1 * db * delta, da1[1] * r])
        j2 = np.stack([a2 * (-2.0 * r * db * delta), da2_beta * q - a2 * dv * delta])
        return np.stack([j1, j2])

    return EstimatingFunction(func, jac, 2, "Euler pseudo-score; second coordinate times delta", "euler", model)


def non_rate_optimal_ef(model: DiffusionModel, a1=(1.0,), a2=(1.0,)) -> EstimatingFunction:
    """``(a_1 [y - F], a_2 [y^2 - (phi + F^2)])`` with an uncentered second moment."""
    _exact_moments(model)
    w = _as_weights((a1, a2)) if not isinstance(a1, QuadraticWeights) else a1

    def func(delta, y, x, theta):
        F = model.cond_mean(delta, x, theta)
        phi = model.cond_var(delta, x, theta)
        a = w(x, delta, theta)
        return np.stack([a[0] * (y - F), a[1] * (y * y - phi - F * F)])

    jac = None
    if w.jac is not None:
        def jac(delta, y, x, theta):
            F = model.cond_mean(delta, x, theta)
            phi = model.cond_var(delta, x, theta)
            dF = model.cond_mean_grad(delta, x, theta)
            dphi = model.cond_var_grad(delta, x, theta)
            a = w(x, delta, theta)
            da = w.jac(x, delta, theta)
            j1 = da[0] * (y - F) - a[0] * dF
            j2 = da[1] * (y * y - phi - F * F) - a[1] * (dphi + 2.0 * F * dF)
            return np.stack([j1, j2])

    return EstimatingFunction(func, jac, "exact", "uncentered second moment; not rate optimal",
                              "non-rate-control", model)


def gh_optimal_quadratic(model: DiffusionModel) -> EstimatingFunction:
    """Godambe-Heyde optimal quadratic martingale estimating function.

    Weights ``a_1 = d_alpha F / phi`` and ``a_2 = delta d_beta phi / (2 phi^2)``;
    at ``delta = 0`` their limits ``d_alpha b / v`` and ``d_beta v / (2 v^2)``.
    """
    _exact_moments(model)
    limit = efficient_quadratic_weights(model)

    def func(x, delta, theta):
        if delta == 0.0:
            return limit.func(x, delta, theta)
        phi = model.cond_var(delta, x, theta)
        dF = model.cond_mean_grad(delta, x, theta)
        dphi = model.cond_var_grad(delta, x, theta)
        return np.stack([dF[0] / phi, delta * dphi[1] / (2 * phi * phi)])

    ef = quadratic_ef(model, QuadraticWeights(func, name="godambe-heyde"), "exact")
    ef.name = "gh-quadratic"
    ef.version_note = "Godambe-Heyde weights with second coordinate times delta"
    return ef


def local_gaussian_score_ef(model: DiffusionModel) -> EstimatingFunction:
    """Pseudo-score of the local Gaussian density expansion.

    ``g_1 = d_alpha log r`` and ``g_2 = delta d_beta log r``, where ``r`` is the
    leading term of the small-delta expansion of the transition density.  The
    first coordinate is centred to first order in delta by subtracting
    ``delta L(g_1(0, ., x))(x)`` so the function is an approximate martingale
    of order 2; the delta = 0 limit is unchanged.
    """

    def compensator(x, theta):
        # L applied to y -> int_x^y d_alpha b / v, evaluated at y = x
        bj = model.jet("b", x, theta, 1)
        vj = model.jet("v", x, theta, 1)
        dbj = model.jet("db_dalpha", x, theta, 1)
        ratio = dbj[0] / vj[0]
        ratio_x = dbj[1] / vj[0] - dbj[0] * vj[1] / vj[0] ** 2
        return bj[0] * ratio + 0.5 * vj[0] * ratio_x

    def func(delta, y, x, theta):
        g1 = model.path_integral("dalpha_m", x, y, theta)
        dk = model.path_integral("k", x, y, theta)
        dbk = model.path_integral("dbeta_k", x, y, theta)
        g2 = -dk * dbk
        if delta != 0.0:
            g1 = g1 - delta * compensator(x, theta)
            vy = model.v(y, theta)
            vx = model.v(x, theta)
            ry = model.dv_dbeta(y, theta) / vy
            rx = model.dv_dbeta(x, theta) / vx
            g2 = g2 + delta * (-0.5 * ry + model.path_integral("dbeta_m", x, y, theta) - 0.25 * (ry - rx))
        return np.stack([g1, g2])

    return EstimatingFunction(func, None, 2, "pseudo-score of local Gaussian density; second coordinate times delta",
                              "local-gaussian", model)


# -- basis estimating functions ---------------------------------------------------
class BasisFunctions:
    """Functions ``f_1, ..., f_N`` of the state (and possibly theta)."""

    def __init__(self, fields):
        self.fields = list(fields)
        if len(self.fields) < 1:
            raise ValueError("basis must contain at least one function")

    def __len__(self):
        return len(self.fields)

    def values(self, x, theta):
        return np.stack([f(x, theta) for f in self.fields])

    def jets(self, x, theta, K):
        return np.stack([f.jet(x, theta, K) for f in self.fields])


def polynomial_basis(powers=(1, 2)) -> BasisFunctions:
    return BasisFunctions([ScalarField.power(p) for p in powers])


def _solve_rows(P, rhs):
    """Solve ``row @ P = rhs`` for a stack of rows; P has shape (N, N, ...), rhs (R, N, ...)."""
    Pm = np.moveaxis(P, (0, 1), (-2, -1))
    Rm = np.moveaxis(rhs, (0, 1), (-2, -1))
    # row @ P = rhs  <=>  P^T row^T = rhs^T
    sol = np.linalg.solve(np.swapaxes(Pm, -1, -2), np.swapaxes(Rm, -1, -2))
    return np.moveaxis(np.swapaxes(sol, -1, -2), (-2, -1), (0, 1))


def _check_conditioning(P, what, tol=1e-10):
    Pm = np.moveaxis(P, (0, 1), (-2, -1))
    cond = np.linalg.cond(Pm)
    if not np.all(np.isfinite(cond)) or np.any(cond > 1.0 / tol):
        raise SingularWeightsError(f"{what} is singular (condition number {np.max(cond):.3g})")


def efficient_weights(model: DiffusionModel, basis: BasisFunctions, c: Callable | None = None):
    """Delta-constant weight matrix ``[[d_a b / v, c], [0, d_b v / v^2]] M(x)^-1``.

    ``M(x)`` has rows ``(f_j'(x), f_j''(x))``.  Returns a callable
    ``(x, delta, theta) -> (2, 2, ...)``.
    """
    if len(basis) != 2:
        raise ValueError("efficient_weights needs a basis with exactly two functions")

    def weights(x, delta, theta):
        theta = as_param(theta)
        x = np.asarray(x, dtype=float)
        jets = basis.jets(x, theta, 2)
        M = np.stack([jets[:, 1], 2.0 * jets[:, 2]], axis=1)  # (N, 2, ...)
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        scale = np.abs(M).max(axis=(0, 1))
        if np.any(np.abs(det) <= 1e-12 * np.maximum(scale, 1e-300) ** 2):
            raise SingularWeightsError("matrix of basis derivatives M(x) is singular")
        v = model.v(x, theta)
        cval = np.zeros_like(v) if c is None else np.asarray(c(x, theta), dtype=float) + 0.0 * v
        top = np.stack([
            np.stack([model.db_dalpha(x, theta) / v, cval]),
            np.stack([np.zeros_like(v), model.dv_dbeta(x, theta) / v**2]),
        ])
        return _solve_rows(M, top)

    return weights


def _transition_gaussian(model, basis, delta, x, theta):
    """Conditional mean, covariance and theta-sensitivity of f(X_delta) for Gaussian transitions."""
    F = model.cond_mean(delta, x, theta)
    phi = model.cond_var(delta, x, theta)
    dF = model.cond_mean_grad(delta, x, theta)
    dphi = model.cond_var_grad(delta, x, theta)
    nodes = F[None] + np.sqrt(2.0 * phi)[None] * _bcast(_GH_T, 1 + np.ndim(x))
    w = _bcast(_GH_W, 1 + np.ndim(x))
    jets = basis.jets(nodes, theta, 2)  # (N, 3, nodes, ...)
    vals = jets[:, 0]
    mean = np.sum(w * vals, axis=1)
    dev = vals - mean[:, None]
    cov = np.sum(w * dev[:, None] * dev[None, :], axis=2)
    e1 = np.sum(w * jets[:, 1], axis=1)
    e2 = np.sum(w * 2.0 * jets[:, 2], axis=1)
    # d_theta E f(F + sqrt(phi) Z) = E f' d_theta F + E f'' d_theta phi / 2
    sens = e1[None] * dF[:, None] + 0.5 * e2[None] * dphi[:, None]
    return mean, cov, sens


def _operator_dtheta(model, theta, f_jet, x, kmax):
    """theta-derivatives of ``L_theta^i f`` acting on a fixed f, shape (2, kmax + 1, N, ...)."""
    theta = np.asarray(theta, dtype=float)
    out = []
    for k in range(2):
        h = 1e-5 * max(1.0, abs(theta[k]))
        up, dn = theta.copy(), theta.copy()
        up[k] += h
        dn[k] -= h
        pu = np.stack([np.stack(generator_powers(model, up, fj, x, kmax)) for fj in f_jet], axis=1)
        pd = np.stack([np.stack(generator_powers(model, dn, fj, x, kmax)) for fj in f_jet], axis=1)
        out.append((pu - pd) / (2 * h))
    return np.stack(out)


def _expansion_coefficients(model, basis, x, theta, order):
    """Delta-power coefficients of the conditional mean, covariance and sensitivity."""
    K = 2 * order
    fj = basis.jets(x, theta, K)  # (N, K+1, ...)
    N = len(basis)
    means = np.stack([np.stack(generator_powers(model, theta, fj[j], x, order)) for j in range(N)], axis=1)
    facts = np.array([1.0, 1.0, 2.0, 6.0])[: order + 1]
    m = means / _bcast(facts, means.ndim)  # (order+1, N, ...)
    second = np.empty((order + 1, N, N) + np.shape(x))
    for j in range(N):
        for k in range(j, N):
            prod = _jets.mul(fj[j], fj[k], K)
            col = np.stack(generator_powers(model, theta, prod, x, order)) / _bcast(facts, 1 + np.ndim(x))
            second[:, j, k] = col
            second[:, k, j] = col
    cov = np.zeros_like(second)
    for i in range(1, order + 1):
        acc = second[i].copy()
        for a in range(i + 1):
            acc -= m[a][:, None] * m[i - a][None, :]
        cov[i] = acc
    dops = _operator_dtheta(model, theta, fj, x, order)  # (2, order+1, N, ...)
    sens = dops / _bcast(facts, dops.ndim - 1)[None]
    sens = np.moveaxis(sens, 1, 0)  # (order+1, 2, N, ...)
    return m, cov, sens, fj


def _gh_limit(model, basis, x, theta):
    if len(basis) != 2:
        raise NotImplementedError("the delta -> 0 limit of the Godambe-Heyde weights is implemented for N = 2")
    m, cov, sens, fj = _expansion_coefficients(model, basis, x, theta, 2)
    fp = fj[:, 1]  # f'
    w = np.stack([-fp[1], fp[0]])
    c2w = np.einsum("jk...,k...->j...", cov[2], w)
    P = np.stack([fp, c2w], axis=1)  # columns: f', C2 w -> rows of P are basis index
    _check_conditioning(P, "conditional covariance expansion (affinely dependent basis?)")
    v = model.v(x, theta)
    rhs1 = np.stack([model.db_dalpha(x, theta) / v, np.einsum("j...,j...->...", sens[2][0], w)])
    rhs2 = np.stack([np.zeros_like(v), np.einsum("j...,j...->...", sens[1][1], w)])
    return _solve_rows(P, np.stack([rhs1, rhs2]))


def gh_optimal_general(model: DiffusionModel, basis: BasisFunctions, delta: float, moment_engine: str = "exact"):
    """Normalized Godambe-Heyde weights ``B(x, delta) = diag(1, delta) A*(x, delta)``.

    ``A*`` solves ``A* Cov(f(X_delta) | x) = d_theta pi f - pi d_theta f``
    pointwise in x.  At ``delta = 0`` the continuous limit is returned.
    Returns a callable ``(x, theta) -> (2, N, ...)``.
    """
    if len(basis) < 2:
        raise ValueError("Godambe-Heyde weights need at least two basis functions")
    if moment_engine not in ("exact", "expansion"):
        raise ValueError(f"unknown moment engine {moment_engine!r}")
    if moment_engine == "exact" and not model.gaussian_transition:
        raise MissingMomentsError(f"exact moment engine needs a Gaussian transition law; {model.name!r} has none")
    delta = float(delta)

    def weights(x, theta):
        theta = as_param(theta)
        x = np.asarray(x, dtype=float)
        if delta == 0.0:
            return _gh_limit(model, basis, x, theta)
        if moment_engine == "exact":
            _, cov, sens = _transition_gaussian(model, basis, delta, x, theta)
        else:
            _, covc, sensc, _ = _expansion_coefficients(model, basis, x, theta, MAX_GENERATOR_ORDER)
            powers = _bcast(delta ** np.arange(MAX_GENERATOR_ORDER + 1), covc.ndim)
            cov = np.sum(covc * powers, axis=0)
            sens = np.sum(sensc * _bcast(delta ** np.arange(MAX_GENERATOR_ORDER + 1), sensc.ndim), axis=0)
        _check_conditioning(cov, "conditional covariance of the basis (affinely dependent basis?)")
        A = _solve_rows(cov, sens)
        return A * _bcast(np.array([1.0, delta]), A.ndim)

    return weights


def basis_ef(model: DiffusionModel, basis: BasisFunctions, weights: Callable, engine="exact",
             kappa: int = 3, name: str = "basis") -> EstimatingFunction:
    """``W(x, delta) [f(y) - pi f(x)]`` with exact or expanded transition operator.

    ``weights`` maps ``(x, delta, theta)`` to a ``(2, N, ...)`` array.
    """
    if engine == "exact":
        if not model.gaussian_transition:
            raise MissingMomentsError("exact transition operator needs a Gaussian transition law")
        order = "exact"
    else:
        _check_kappa(kappa)
        order = int(kappa)

    def pi_f(delta, x, theta):
        if delta == 0.0:
            return basis.values(x, theta)
        if engine == "exact":
            return _transition_gaussian(model, basis, delta, x, theta)[0]
        K = 2 * (order - 1)
        fj = basis.jets(x, theta, K)
        return np.stack([transition_expansion(model, theta, fj[j], x, delta, order) for j in range(len(basis))])

    def func(delta, y, x, theta):
        x, y = np.broadcast_arrays(x, y)
        h = basis.values(y, theta) - pi_f(delta, x, theta)
        W = weights(x, delta, theta)
        return np.einsum("ij...,j...->i...", W, h)

    return EstimatingFunction(func, None, order, "basis form with normalized weights", name, model)


def gh_general_ef(model: DiffusionModel, basis: BasisFunctions | None = None, moment_engine: str | None = None,
                  kappa: int = 3) -> EstimatingFunction:
    """Estimating function built on the normalized Godambe-Heyde weights."""
    basis = basis or polynomial_basis((1, 2))
    if moment_engine is None:
        moment_engine = "exact" if model.gaussian_transition else "expansion"

    cache = WeightCache()

    def weights(x, delta, theta):
        return cache.get(x, delta, theta, lambda: gh_optimal_general(model, basis, delta, moment_engine)(x, theta))

    ef = basis_ef(model, basis, weights, moment_engine, kappa, name="gh-general")
    ef.weight_cache = cache
    return ef


class WeightCache:
    """Bounded LRU cache of weight arrays keyed by (x rounded to 1e-12, delta, theta).

    The weights are pointwise in x and are recomputed many times for the same
    left end points (data sweeps, y-stencils, theta-differences of G).
    Concurrent inserts of one key store identical values, so last writer wins.
    """

    def __init__(self, maxsize: int = 512):
        self.maxsize = maxsize
        self._store: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, x, delta, theta, compute):
        x = np.asarray(x, dtype=float)
        key = (float(delta), tuple(map(float, theta)), x.shape, np.round(x, 12).tobytes())
        with self._lock:
            hit = self._store.get(key)
            if hit is not None:
                self._store.move_to_end(key)
                self.hits += 1
                return hit
        value = compute()
        with self._lock:
            self.misses += 1
            self._store[key] = value
            while len(self._store) > self.maxsize:
                self._store.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._store.clear()


def make_estimating_function(name: str, model: DiffusionModel, **options) -> EstimatingFunction:
    """Build a catalog estimating function by name."""
    if name == "quad-exact-efficient":
        return _named(quadratic_ef(model, efficient_quadratic_weights(model), "exact"), name)
    if name == "quad-expansion-k2":
        return _named(quadratic_ef(model, efficient_quadratic_weights(model), options.get("kappa", 2)), name)
    if name == "euler":
        return euler_ef(model)
    if name == "gh-quadratic":
        return gh_optimal_quadratic(model)
    if name == "gh-general":
        return gh_general_ef(model, moment_engine=options.get("moment_engine"))
    if name == "local-gaussian":
        return local_gaussian_score_ef(model)
    if name == "non-rate-control":
        return non_rate_optimal_ef(model, options.get("a1", (1.0,)), options.get("a2", (1.0,)))
    raise ValueError(f"unknown estimator {name!r}; choose from {CATALOG}")


def _named(ef, name):
    ef.name = name
    return ef
