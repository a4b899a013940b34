"""Scalar diffusion models dX = b(X; alpha) dt + sigma(X; beta) dW.

The module evaluates the generator and its powers through Taylor jets, and
computes the stationary density and stationary expectations by adaptive
quadrature on a truncated support.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, optimize, stats

from . import _jets
from .exceptions import (
    ConfigurationWarning,
    MissingMomentsError,
    QuadratureError,
    StateSpaceError,
)

MAX_GENERATOR_ORDER = 3
TRUNCATION_RATIO = 1e-12

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


class ParamPoint(NamedTuple):
    alpha: float
    beta: float


def as_param(theta) -> ParamPoint:
    if isinstance(theta, ParamPoint):
        return theta
    if isinstance(theta, dict):
        return ParamPoint(float(theta["alpha"]), float(theta["beta"]))
    alpha, beta = theta
    return ParamPoint(float(alpha), float(beta))


@dataclass(frozen=True)
class StateInterval:
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"empty state interval ({self.lower}, {self.upper})")

    def contains(self, x, closed: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if closed:
            return (x >= self.lower) & (x <= self.upper)
        return (x > self.lower) & (x < self.upper)

    def check(self, x, closed: bool = False, what: str = "x"):
        inside = self.contains(x, closed=closed)
        if not np.all(inside):
            bad = np.asarray(x, dtype=float)[~inside] if np.ndim(x) else x
            raise StateSpaceError(
                f"{what} outside state interval ({self.lower}, {self.upper}): {np.ravel(bad)[:5]}"
            )


class ScalarField:
    """A function of the state with Taylor jets up to ``order``.

    ``func`` takes ``(x, theta)``.  When ``jet`` is given it must return the
    Taylor coefficients ``(x, theta, K) -> array (K + 1, ...)``; otherwise they
    are obtained by finite-difference interpolation.
    """

    def __init__(self, func: Callable, order: int = 6, jet: Callable | None = None, name: str = ""):
        self.func = func
        self.order = int(order)
        self._jet = jet
        self.name = name or getattr(func, "__name__", "field")

    def __call__(self, x, theta=None):
        return self.func(np.asarray(x, dtype=float), theta)

    def jet(self, x, theta, K: int) -> np.ndarray:
        if K > self.order:
            raise ValueError(f"{self.name}: derivatives up to order {K} requested, {self.order} declared")
        x = np.asarray(x, dtype=float)
        if self._jet is not None:
            return self._jet(x, theta, K)
        return _jets.fd_jet(lambda z: self.func(z, theta), x, K)

    @classmethod
    def polynomial(cls, coeffs, name: str = "") -> "ScalarField":
        coeffs = tuple(float(c) for c in coeffs)
        poly = np.polynomial.Polynomial(coeffs)
        return cls(
            lambda x, theta=None: poly(np.asarray(x, dtype=float)),
            order=64,
            jet=lambda x, theta, K: _jets.polynomial(coeffs, x, K),
            name=name or f"poly{coeffs}",
        )

    @classmethod
    def power(cls, p: int) -> "ScalarField":
        coeffs = [0.0] * p + [1.0]
        return cls.polynomial(coeffs, name=f"x^{p}")


_FD_THETA_STEP = 1e-6


class DiffusionModel:
    """Diffusion with drift ``b(x, alpha)`` and diffusion ``sigma(x, beta)``.

    User models supply vectorized ``drift`` and ``diffusion``; every partial
    derivative is then obtained numerically.  The builtin subclasses override
    the partials with closed forms and add exact conditional moments.
    """

    name = "custom"
    has_exact_moments = False
    gaussian_transition = False
    truncate_boundary = False

    def __init__(self, drift: Callable, diffusion: Callable, interval: StateInterval | None = None,
                 name: str = "custom"):
        self._drift = drift
        self._diffusion = diffusion
        self.interval = interval or StateInterval()
        self.name = name
        self._norm_cache: dict = {}

    # -- coefficients -------------------------------------------------------
    def b(self, x, theta):
        return np.asarray(self._drift(np.asarray(x, dtype=float), theta[0]), dtype=float) + 0.0 * np.asarray(x)

    def sigma(self, x, theta):
        return np.asarray(self._diffusion(np.asarray(x, dtype=float), theta[1]), dtype=float) + 0.0 * np.asarray(x)

    def v(self, x, theta):
        return self.sigma(x, theta) ** 2

    def db_dalpha(self, x, theta):
        a, be = theta
        h = _FD_THETA_STEP * max(1.0, abs(a))
        return (self.b(x, (a + h, be)) - self.b(x, (a - h, be))) / (2 * h)

    def d2b_dalpha2(self, x, theta):
        a, be = theta
        h = 1e-4 * max(1.0, abs(a))
        return (self.b(x, (a + h, be)) - 2 * self.b(x, theta) + self.b(x, (a - h, be))) / (h * h)

    def dv_dbeta(self, x, theta):
        a, be = theta
        h = _FD_THETA_STEP * max(1.0, abs(be))
        return (self.v(x, (a, be + h)) - self.v(x, (a, be - h))) / (2 * h)

    def d2v_dbeta2(self, x, theta):
        a, be = theta
        h = 1e-4 * max(1.0, abs(be))
        return (self.v(x, (a, be + h)) - 2 * self.v(x, theta) + self.v(x, (a, be - h))) / (h * h)

    def _coef(self, kind: str):
        return {
            "b": self.b,
            "v": self.v,
            "db_dalpha": self.db_dalpha,
            "dv_dbeta": self.dv_dbeta,
        }[kind]

    def jet(self, kind: str, x, theta, K: int) -> np.ndarray:
        """Taylor coefficients in x of ``b``, ``v``, ``db_dalpha`` or ``dv_dbeta``."""
        func = self._coef(kind)
        return _jets.fd_jet(
            lambda z: func(z, theta), x, K, lower=self.interval.lower, upper=self.interval.upper
        )

    # -- exact conditional moments -------------------------------------------
    def cond_mean(self, delta, x, theta):
        raise MissingMomentsError(f"model {self.name!r} has no closed-form conditional mean")

    def cond_var(self, delta, x, theta):
        raise MissingMomentsError(f"model {self.name!r} has no closed-form conditional variance")

    def cond_mean_grad(self, delta, x, theta):
        raise MissingMomentsError(f"model {self.name!r} has no closed-form moment partials")

    def cond_var_grad(self, delta, x, theta):
        raise MissingMomentsError(f"model {self.name!r} has no closed-form moment partials")

    # -- integrals along the state -------------------------------------------
    def _integrand(self, kind: str, z, theta):
        if kind == "k":
            return 1.0 / self.sigma(z, theta)
        if kind == "dbeta_k":
            return -0.5 * self.dv_dbeta(z, theta) / self.v(z, theta) ** 1.5
        if kind == "m":
            return self.b(z, theta) / self.v(z, theta)
        if kind == "dalpha_m":
            return self.db_dalpha(z, theta) / self.v(z, theta)
        if kind == "dbeta_m":
            return -self.b(z, theta) * self.dv_dbeta(z, theta) / self.v(z, theta) ** 2
        raise KeyError(kind)

    def path_integral(self, kind: str, x, y, theta):
        """``int_x^y`` of one of the antiderivative integrands, by Gauss-Legendre."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        half = 0.5 * (y - x)
        mid = 0.5 * (y + x)
        nodes = mid[..., None] + half[..., None] * _GL_NODES
        vals = self._integrand(kind, nodes, theta)
        return half * np.sum(vals * _GL_WEIGHTS, axis=-1)

    # -- stationary law ------------------------------------------------------
    def anchor(self) -> float:
        lo, hi = self.interval.lower, self.interval.upper
        if math.isfinite(lo) and math.isfinite(hi):
            return 0.5 * (lo + hi)
        if math.isfinite(lo):
            return lo + 1.0
        if math.isfinite(hi):
            return hi - 1.0
        return 0.0

    def log_unnormalized_density(self, x, theta):
        """``log(1 / (s(x) v(x)))`` with the scale density anchored at ``anchor()``."""
        x = np.asarray(x, dtype=float)
        x0 = self.anchor()

        def m_single(xi):
            val, _ = integrate.quad(lambda z: float(self._integrand("m", z, theta)), x0, xi, limit=200)
            return val

        m = np.vectorize(m_single, otypes=[float])(x)
        return -np.log(self.v(x, theta)) + 2.0 * m

    def stationary_quantiles(self, theta, probs):
        norm = normalization(self, theta)
        grid = np.linspace(norm.lower, norm.upper, 4001)
        inner = grid[1:-1]
        dens = np.concatenate([[0.0], np.exp(self.log_unnormalized_density(inner, theta) - norm.log_z), [0.0]])
        cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
        cdf /= cdf[-1]
        return np.interp(np.asarray(probs, dtype=float), cdf, grid)

    def sample_stationary(self, theta, rng: np.random.Generator) -> float:
        """One draw from the stationary law by rejection against a uniform envelope."""
        norm = normalization(self, theta)
        envelope = 1.05
        for _ in range(100000):
            x = rng.uniform(norm.lower, norm.upper)
            if not self.interval.contains(x):
                continue
            ratio = math.exp(float(self.log_unnormalized_density(x, theta)) - norm.log_max)
            if rng.uniform() * envelope <= ratio:
                return x
        raise QuadratureError("rejection sampler for the stationary law did not accept")

    def check_assumptions(self, theta):
        """Hook for builtin models to warn about unverified assumptions."""

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class OrnsteinUhlenbeck(DiffusionModel):
    """dX = -alpha X dt + beta dW on the real line."""

    has_exact_moments = True
    gaussian_transition = True

    def __init__(self):
        super().__init__(lambda x, a: -a * x, lambda x, be: be + 0.0 * x, StateInterval(), name="ou")

    def b(self, x, theta):
        return -theta[0] * np.asarray(x, dtype=float)

    def sigma(self, x, theta):
        return theta[1] + 0.0 * np.asarray(x, dtype=float)

    def v(self, x, theta):
        return theta[1] ** 2 + 0.0 * np.asarray(x, dtype=float)

    def db_dalpha(self, x, theta):
        return -np.asarray(x, dtype=float)

    def d2b_dalpha2(self, x, theta):
        return 0.0 * np.asarray(x, dtype=float)

    def dv_dbeta(self, x, theta):
        return 2.0 * theta[1] + 0.0 * np.asarray(x, dtype=float)

    def d2v_dbeta2(self, x, theta):
        return 2.0 + 0.0 * np.asarray(x, dtype=float)

    def jet(self, kind, x, theta, K):
        a, be = theta
        x = np.asarray(x, dtype=float)
        if kind == "b":
            return _jets.polynomial([0.0, -a], x, K)
        if kind == "v":
            return _jets.constant(np.full(x.shape, be * be), K)
        if kind == "db_dalpha":
            return _jets.polynomial([0.0, -1.0], x, K)
        if kind == "dv_dbeta":
            return _jets.constant(np.full(x.shape, 2.0 * be), K)
        raise KeyError(kind)

    @staticmethod
    def _g(a, delta):
        # (1 - exp(-2 a delta)) / (2 a), continuous at a = 0
        if a == 0.0:
            return delta
        return -math.expm1(-2.0 * a * delta) / (2.0 * a)

    def cond_mean(self, delta, x, theta):
        return np.asarray(x, dtype=float) * math.exp(-theta[0] * delta)

    def cond_var(self, delta, x, theta):
        return theta[1] ** 2 * self._g(theta[0], delta) + 0.0 * np.asarray(x, dtype=float)

    def cond_mean_grad(self, delta, x, theta):
        x = np.asarray(x, dtype=float)
        d_alpha = -delta * x * math.exp(-theta[0] * delta)
        return np.stack([d_alpha, np.zeros_like(d_alpha)])

    def cond_var_grad(self, delta, x, theta):
        a, be = theta
        x = np.asarray(x, dtype=float)
        g = self._g(a, delta)
        if a == 0.0:
            dg = -delta * delta
        else:
            dg = (delta * math.exp(-2.0 * a * delta) - g) / a
        return np.stack([np.full(x.shape, be * be * dg), np.full(x.shape, 2.0 * be * g)])

    def path_integral(self, kind, x, y, theta):
        a, be = theta
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sq = y * y - x * x
        if kind == "k":
            return (y - x) / be
        if kind == "dbeta_k":
            return -(y - x) / be**2
        if kind == "m":
            return -a * sq / (2 * be**2)
        if kind == "dalpha_m":
            return -sq / (2 * be**2)
        if kind == "dbeta_m":
            return a * sq / be**3
        raise KeyError(kind)

    def log_unnormalized_density(self, x, theta):
        a, be = theta
        x = np.asarray(x, dtype=float)
        return -math.log(be * be) - a * x * x / (be * be)

    def stationary_quantiles(self, theta, probs):
        a, be = theta
        return stats.norm.ppf(np.asarray(probs, dtype=float), scale=be / math.sqrt(2 * a))

    def sample_stationary(self, theta, rng):
        a, be = theta
        return float(rng.normal(0.0, be / math.sqrt(2 * a)))


class CoxIngersollRoss(DiffusionModel):
    """dX = alpha (m0 - X) dt + beta sqrt(X) dW on (0, inf) with fixed m0."""

    has_exact_moments = True
    truncate_boundary = True

    def __init__(self, m0: float = 1.0):
        if not (math.isfinite(m0) and m0 > 0):
            raise ValueError(f"CIR long-run mean m0 must be positive, got {m0}")
        self.m0 = float(m0)
        super().__init__(
            lambda x, a: a * (self.m0 - x),
            lambda x, be: be * np.sqrt(x),
            StateInterval(0.0, math.inf),
            name="cir",
        )

    def b(self, x, theta):
        return theta[0] * (self.m0 - np.asarray(x, dtype=float))

    def sigma(self, x, theta):
        return theta[1] * np.sqrt(np.asarray(x, dtype=float))

    def v(self, x, theta):
        return theta[1] ** 2 * np.asarray(x, dtype=float)

    def db_dalpha(self, x, theta):
        return self.m0 - np.asarray(x, dtype=float)

    def d2b_dalpha2(self, x, theta):
        return 0.0 * np.asarray(x, dtype=float)

    def dv_dbeta(self, x, theta):
        return 2.0 * theta[1] * np.asarray(x, dtype=float)

    def d2v_dbeta2(self, x, theta):
        return 2.0 * np.asarray(x, dtype=float)

    def jet(self, kind, x, theta, K):
        a, be = theta
        if kind == "b":
            return _jets.polynomial([a * self.m0, -a], x, K)
        if kind == "v":
            return _jets.polynomial([0.0, be * be], x, K)
        if kind == "db_dalpha":
            return _jets.polynomial([self.m0, -1.0], x, K)
        if kind == "dv_dbeta":
            return _jets.polynomial([0.0, 2.0 * be], x, K)
        raise KeyError(kind)

    def cond_mean(self, delta, x, theta):
        return self.m0 + (np.asarray(x, dtype=float) - self.m0) * math.exp(-theta[0] * delta)

    def _var_parts(self, a, delta):
        e1 = math.exp(-a * delta)
        one_minus = -math.expm1(-a * delta)
        u = e1 * one_minus / a
        w = one_minus**2 / (2 * a)
        du = (-delta * e1 + 2 * delta * e1 * e1) / a - u / a
        dw = one_minus * delta * e1 / a - w / a
        return u, w, du, dw

    def cond_var(self, delta, x, theta):
        a, be = theta
        u, w, _, _ = self._var_parts(a, delta)
        return be * be * (np.asarray(x, dtype=float) * u + self.m0 * w)

    def cond_mean_grad(self, delta, x, theta):
        x = np.asarray(x, dtype=float)
        d_alpha = -delta * (x - self.m0) * math.exp(-theta[0] * delta)
        return np.stack([d_alpha, np.zeros_like(d_alpha)])

    def cond_var_grad(self, delta, x, theta):
        a, be = theta
        x = np.asarray(x, dtype=float)
        u, w, du, dw = self._var_parts(a, delta)
        return np.stack([be * be * (x * du + self.m0 * dw), 2.0 * be * (x * u + self.m0 * w)])

    def path_integral(self, kind, x, y, theta):
        a, be = theta
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if kind == "k":
            return 2.0 * (np.sqrt(y) - np.sqrt(x)) / be
        if kind == "dbeta_k":
            return -2.0 * (np.sqrt(y) - np.sqrt(x)) / be**2
        q = self.m0 * (np.log(y) - np.log(x)) - (y - x)
        if kind == "m":
            return a * q / be**2
        if kind == "dalpha_m":
            return q / be**2
        if kind == "dbeta_m":
            return -2.0 * a * q / be**3
        raise KeyError(kind)

    def log_unnormalized_density(self, x, theta):
        a, be = theta
        x = np.asarray(x, dtype=float)
        return -np.log(be * be * x) + 2.0 * a * (self.m0 * np.log(x) - x) / (be * be)

    def gamma_law(self, theta):
        a, be = theta
        return stats.gamma(a=2 * a * self.m0 / be**2, scale=be**2 / (2 * a))

    def stationary_quantiles(self, theta, probs):
        return self.gamma_law(theta).ppf(np.asarray(probs, dtype=float))

    def sample_stationary(self, theta, rng):
        # rejection from the tabulated density, as for any model without a sampler
        return DiffusionModel.sample_stationary(self, theta, rng)

    def check_assumptions(self, theta):
        a, be = theta
        if 2 * a * self.m0 < be * be:
            warnings.warn(
                f"CIR Feller condition 2*alpha*m0 >= beta^2 violated at alpha={a}, beta={be}, m0={self.m0}",
                ConfigurationWarning,
                stacklevel=3,
            )


def builtin_model(name: str, fixed: dict | None = None) -> DiffusionModel:
    fixed = dict(fixed or {})
    if name == "ou":
        if fixed:
            raise ValueError(f"model 'ou' takes no fixed constants, got {sorted(fixed)}")
        return OrnsteinUhlenbeck()
    if name == "cir":
        unknown = set(fixed) - {"m0"}
        if unknown:
            raise ValueError(f"unknown fixed constants for 'cir': {sorted(unknown)}")
        return CoxIngersollRoss(float(fixed.get("m0", 1.0)))
    raise ValueError(f"unknown model {name!r}; expected 'ou' or 'cir'")


def model_from_config(block: dict) -> DiffusionModel:
    return builtin_model(block["name"], block.get("fixed"))


# -- generator -----------------------------------------------------------------
def generator_powers(model: DiffusionModel, theta, f_jet: np.ndarray, x, kmax: int) -> list:
    """Values ``[f(x), L f(x), ..., L^kmax f(x)]`` from a jet of degree ``2 kmax``."""
    if kmax > MAX_GENERATOR_ORDER:
        raise ValueError(f"generator powers above {MAX_GENERATOR_ORDER} are not supported")
    if _jets.degree(f_jet) < 2 * kmax:
        raise ValueError("jet degree too small for the requested generator power")
    K = 2 * kmax
    f_jet = f_jet[: K + 1]
    out = [f_jet[0]]
    if kmax == 0:
        return out
    bj = model.jet("b", x, theta, K - 2)
    vj = model.jet("v", x, theta, K - 2)
    cur = f_jet
    for _ in range(kmax):
        cur = _jets.generator(bj, vj, cur)
        out.append(cur[0])
    return out


def apply_generator(model: DiffusionModel, theta, f: ScalarField, order: int, x):
    """``L_theta^order f(x)`` by repeated application of ``b f' + v f'' / 2``."""
    theta = as_param(theta)
    if order < 1:
        raise ValueError("order must be a positive integer")
    if order > MAX_GENERATOR_ORDER:
        raise ValueError(f"generator powers above {MAX_GENERATOR_ORDER} are not supported")
    if f.order < 2 * order:
        raise ValueError(
            f"field {f.name!r} declares derivatives up to {f.order}, generator power {order} needs {2 * order}"
        )
    model.interval.check(x)
    x = np.asarray(x, dtype=float)
    fj = f.jet(x, theta, 2 * order)
    return generator_powers(model, theta, fj, x, order)[order]


def transition_expansion(model: DiffusionModel, theta, f_jet: np.ndarray, x, delta: float, kappa: int):
    """``sum_{i < kappa} delta^i / i! L^i f(x)``."""
    powers = generator_powers(model, theta, f_jet, x, kappa - 1)
    total = np.zeros_like(np.asarray(powers[0], dtype=float))
    fact = 1.0
    for i, term in enumerate(powers):
        if i > 0:
            fact *= i
        total = total + delta**i / fact * term
    return total


# -- stationary law ------------------------------------------------------------
@dataclass(frozen=True)
class Normalization:
    lower: float
    upper: float
    mode: float
    log_max: float
    log_z: float


def _scan(logf, start, lower, upper, direction, cut, step0):
    """Walk away from ``start`` until the log density drops ``cut`` below its running max."""
    xs, ys = [], []
    finite_end = lower if direction < 0 else upper
    best = -math.inf
    for k in range(200):
        if math.isfinite(finite_end):
            x = finite_end + (start - finite_end) * 2.0 ** (-(k + 1))
        else:
            x = start + direction * step0 * 2.0**k
        y = float(logf(x))
        if not math.isfinite(y) and y > 0:
            raise QuadratureError(f"log density not finite at {x}")
        xs.append(x)
        ys.append(y)
        best = max(best, y)
        if y < best - cut and k > 2:
            return xs, ys, True
        if math.isfinite(finite_end) and abs(x - finite_end) < 1e-300:
            break
    if math.isfinite(finite_end):
        return xs, ys, False
    raise QuadratureError("stationary density tail does not decay; the model looks non-integrable")


def normalization(model: DiffusionModel, theta) -> Normalization:
    """Truncated support, mode and log normalizing constant (cached per theta)."""
    theta = as_param(theta)
    cached = model._norm_cache.get(theta)
    if cached is not None:
        return cached
    model.check_assumptions(theta)
    logf = lambda x: model.log_unnormalized_density(x, theta)  # noqa: E731
    cut = -math.log(TRUNCATION_RATIO)
    start = model.anchor()
    step0 = 1e-3 * max(1.0, abs(start))
    lx, ly, lo_found = _scan(logf, start, model.interval.lower, model.interval.upper, -1, cut, step0)
    ux, uy, hi_found = _scan(logf, start, model.interval.lower, model.interval.upper, +1, cut, step0)
    xs = np.array(lx[::-1] + [start] + ux)
    ys = np.array(ly[::-1] + [float(logf(start))] + uy)
    i = int(np.argmax(ys))
    left = xs[max(i - 1, 0)]
    right = xs[min(i + 1, len(xs) - 1)]
    if right > left:
        res = optimize.minimize_scalar(lambda z: -float(logf(z)), bounds=(left, right), method="bounded",
                                       options={"xatol": 1e-12 * max(1.0, abs(xs[i]))})
        mode, log_max = (float(res.x), -float(res.fun)) if -res.fun >= ys[i] else (float(xs[i]), float(ys[i]))
    else:
        mode, log_max = float(xs[i]), float(ys[i])
    level = log_max - cut

    def edge(found, pts, vals, boundary):
        if not found:
            return boundary
        # outermost scanned point is below the level, its neighbour above
        a, fa = pts[-1], vals[-1]
        b = pts[-2] if len(pts) > 1 else start
        return float(optimize.brentq(lambda z: float(logf(z)) - level, a, b, xtol=1e-12)) if (
            float(logf(b)) - level > 0 and fa - level < 0
        ) else a

    lower = edge(lo_found, lx, ly, model.interval.lower)
    upper = edge(hi_found, ux, uy, model.interval.upper)
    lower, upper = min(lower, mode), max(upper, mode)
    val, err, *rest = integrate.quad(
        lambda z: math.exp(float(logf(z)) - log_max), lower, upper,
        points=[mode] if lower < mode < upper else None, limit=500, epsabs=0.0, epsrel=1e-12, full_output=1,
    )
    if not math.isfinite(val) or val <= 0 or err > 1e-6 * val:
        raise QuadratureError(f"normalizing constant quadrature failed (value={val}, error={err})")
    norm = Normalization(lower, upper, mode, log_max, log_max + math.log(val))
    return model._norm_cache.setdefault(theta, norm)


def stationary_density(model: DiffusionModel, theta, x):
    """Normalized stationary density ``mu_theta(x)``."""
    theta = as_param(theta)
    model.interval.check(x)
    norm = normalization(model, theta)
    return np.exp(model.log_unnormalized_density(x, theta) - norm.log_z)


def _as_callable(h, theta):
    if isinstance(h, ScalarField):
        return lambda x: h(x, theta)
    return h


def stationary_expectation(model: DiffusionModel, theta, h, rtol: float = 1e-8) -> float:
    """``int h(x) mu_theta(x) dx`` over the truncated support."""
    theta = as_param(theta)
    norm = normalization(model, theta)
    func = _as_callable(h, theta)

    def integrand(x):
        return float(func(x)) * math.exp(float(model.log_unnormalized_density(x, theta)) - norm.log_z)

    points = [norm.mode] if norm.lower < norm.mode < norm.upper else None
    val, err, *rest = integrate.quad(integrand, norm.lower, norm.upper, points=points, limit=500,
                                     epsabs=1e-14, epsrel=rtol * 1e-2, full_output=1)
    if not math.isfinite(val) or err > max(rtol * abs(val), 1e-12):
        raise QuadratureError(f"stationary expectation did not converge (value={val}, error={err})")
    return float(val)


def stationary_integrate(model: DiffusionModel, theta, func, rtol: float = 1e-8) -> np.ndarray:
    """Vector version of :func:`stationary_expectation` for array-valued ``func``."""
    theta = as_param(theta)
    norm = normalization(model, theta)

    def integrand(x):
        weight = math.exp(float(model.log_unnormalized_density(x, theta)) - norm.log_z)
        return np.asarray(func(x), dtype=float) * weight

    points = [norm.mode] if norm.lower < norm.mode < norm.upper else None
    # integrands built from finite-difference stencils jitter near 1e-9, so ask for rtol itself
    val, err = integrate.quad_vec(integrand, norm.lower, norm.upper, epsabs=1e-13, epsrel=rtol,
                                  points=points, limit=500)
    if not np.all(np.isfinite(val)) or err > max(rtol * float(np.max(np.abs(val))), 1e-11):
        raise QuadratureError(f"stationary integral did not converge (error estimate {err})")
    return val


def stationary_quantiles(model: DiffusionModel, theta, probs):
    return model.stationary_quantiles(as_param(theta), probs)


def default_grid(model: DiffusionModel, theta, size: int = 21):
    """Stationary quantiles at levels 0.025, ..., 0.975."""
    return np.asarray(stationary_quantiles(model, theta, np.linspace(0.025, 0.975, size)), dtype=float)
