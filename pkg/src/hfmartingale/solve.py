"""Root finding for the estimating equation G_n(theta) = 0."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .estfun import EstimatingFunction
from .exceptions import BoundsEscape, NoConvergence, SingularJacobian
from .inference import scaling_matrix
from .model import ParamPoint, as_param

logger = logging.getLogger(__name__)

PARAMS = ("alpha", "beta")
BETA_FLOOR = 1e-8


@dataclass
class SolveSettings:
    """Newton settings.

    ``start`` is the configured start; unless ``multistart`` is given
    explicitly, four perturbations at +-``perturbation`` per coordinate are
    added.  ``fixed`` pins parameters by name (e.g. ``{"beta": 1.0}``).
    """

    start: tuple = (1.0, 1.0)
    tol_g: float = 1e-8
    tol_step: float = 1e-12
    max_iter: int = 100
    damping: float = 1.0
    multistart: tuple | None = None
    perturbation: float = 0.2
    bounds: tuple = ((-math.inf, math.inf), (BETA_FLOOR, math.inf))
    fixed: dict = field(default_factory=dict)
    fallback: bool = True

    def __post_init__(self):
        if not self.tol_g > 0:
            raise ValueError("tol_g must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        unknown = set(self.fixed) - set(PARAMS)
        if unknown:
            raise ValueError(f"unknown fixed parameters {sorted(unknown)}")
        if len(self.fixed) == 2:
            raise ValueError("at least one parameter must be free")
        lo, hi = self.bounds[1]
        self.bounds = (tuple(map(float, self.bounds[0])), (max(float(lo), BETA_FLOOR), float(hi)))
        self.start = tuple(as_param(self.start))
        for s in self.starts():
            if not self.inside(s):
                raise ValueError(f"start {s} lies outside the bounds {self.bounds}")

    def inside(self, theta) -> bool:
        return all(lo <= t <= hi for t, (lo, hi) in zip(theta, self.bounds))

    def starts(self) -> list:
        base = np.array(self.start, dtype=float)
        for name, val in self.fixed.items():
            base[PARAMS.index(name)] = float(val)
        if self.multistart is not None:
            out = [tuple(base)] + [tuple(as_param(s)) for s in self.multistart]
        else:
            out = [tuple(base)]
            for k in range(2):
                if PARAMS[k] in self.fixed:
                    continue
                for sign in (1.0, -1.0):
                    s = base.copy()
                    s[k] *= 1.0 + sign * self.perturbation
                    out.append(tuple(s))
        return [s for i, s in enumerate(out) if s not in out[:i]]


@dataclass
class Estimate:
    theta_hat: ParamPoint
    g_norm: float
    iterations: int
    converged: bool
    start_used: ParamPoint
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return {
            "theta_hat": {"alpha": self.theta_hat.alpha, "beta": self.theta_hat.beta},
            "g_norm": self.g_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "start_used": {"alpha": self.start_used.alpha, "beta": self.start_used.beta},
        }


class _Problem:
    """Normalized system ``D_n G_n`` restricted to the free parameters."""

    def __init__(self, ef, path, settings):
        self.ef = ef
        self.x, self.y, self.delta = path.x, path.y, path.delta
        self.D = np.diag(scaling_matrix(path.n, path.delta))
        self.settings = settings
        self.free = [k for k in range(2) if PARAMS[k] not in settings.fixed]
        self.lo = np.array([settings.bounds[k][0] for k in self.free])
        self.hi = np.array([settings.bounds[k][1] for k in self.free])

    def full(self, z, base):
        theta = np.array(base, dtype=float)
        theta[self.free] = z
        return theta

    def residual(self, theta):
        with np.errstate(all="ignore"):
            g = self.ef(self.delta, self.y, self.x, theta).sum(axis=-1)
        return (self.D * g)[self.free]

    def jacobian(self, theta):
        j = self.ef.jac_theta(self.delta, self.y, self.x, theta).sum(axis=-1)
        return (self.D[:, None] * j)[np.ix_(self.free, self.free)]

    def safe_residual(self, theta):
        try:
            r = self.residual(theta)
        except (ValueError, ArithmeticError):
            return None
        return r if np.all(np.isfinite(r)) else None


def _norm(r):
    return math.inf if r is None else float(np.max(np.abs(r)))


def _newton(problem: _Problem, theta0, settings: SolveSettings):
    theta = np.array(theta0, dtype=float)
    z = theta[problem.free]
    r = problem.safe_residual(theta)
    if r is None:
        raise FloatingPointError("estimating function is not finite at the start")
    it = 0
    for it in range(1, settings.max_iter + 1):
        if _norm(r) == 0.0:
            return theta, r, it - 1
        J = problem.jacobian(theta)
        if not np.all(np.isfinite(J)):
            raise SingularJacobian("Jacobian is not finite")
        cond = np.linalg.cond(J)
        if not math.isfinite(cond) or cond > 1e13:
            raise SingularJacobian(f"Jacobian is singular (condition number {cond:.3g})")
        step = -np.linalg.solve(J, r)
        lam = settings.damping
        escaped = False
        while lam > 1e-10:
            cand_z = z + lam * step
            if np.any(cand_z < problem.lo) or np.any(cand_z > problem.hi):
                escaped = True
                cand_z = np.clip(cand_z, problem.lo, problem.hi)
            cand = problem.full(cand_z, theta)
            rc = problem.safe_residual(cand)
            if rc is not None and _norm(rc) <= (1.0 - 1e-4 * lam) * _norm(r):
                break
            lam *= 0.5
        else:
            if escaped:
                raise BoundsEscape("iterates leave the parameter rectangle after projection")
            # no decrease: either at the noise floor of a root or stalled
            return theta, r, it
        moved = np.max(np.abs(cand_z - z) / (1.0 + np.abs(z)))
        z, theta, r = cand_z, cand, rc
        if moved < settings.tol_step:
            break
    return theta, r, it


def _fallback(problem: _Problem, theta0, settings: SolveSettings):
    base = np.array(theta0, dtype=float)

    def objective(z):
        r = problem.safe_residual(problem.full(z, base))
        return 1e300 if r is None else float(r @ r)

    bounds = list(zip(problem.lo, problem.hi))
    res = optimize.minimize(objective, base[problem.free], method="Nelder-Mead", bounds=bounds,
                            options={"xatol": 1e-10, "fatol": 1e-20, "maxiter": 2000})
    return problem.full(res.x, base)


def _solve_from(problem, start, settings):
    diag = {"start": tuple(start)}
    try:
        theta, r, it = _newton(problem, start, settings)
        diag["method"] = "newton"
    except SingularJacobian as exc:
        diag.update(error=f"SingularJacobian: {exc}")
        return None, diag
    except (BoundsEscape, FloatingPointError, np.linalg.LinAlgError) as exc:
        if not settings.fallback:
            diag.update(error=f"{type(exc).__name__}: {exc}")
            return None, diag
        diag["newton_error"] = f"{type(exc).__name__}: {exc}"
        theta, r, it = None, None, settings.max_iter
    if _norm(r) > settings.tol_g and settings.fallback:
        guess = _fallback(problem, start if theta is None else theta, settings)
        try:
            theta, r, it2 = _newton(problem, guess, settings)
            it += it2
            diag["method"] = "nelder-mead+newton"
        except (SingularJacobian, BoundsEscape, FloatingPointError, np.linalg.LinAlgError) as exc:
            diag.update(error=f"{type(exc).__name__} after fallback: {exc}")
            return None, diag
    g_norm = _norm(r)
    est = Estimate(ParamPoint(*map(float, theta)), g_norm, it, g_norm <= settings.tol_g, ParamPoint(*start))
    diag.update(g_norm=g_norm, iterations=it)
    return est, diag


def solve_estimating_equation(ef: EstimatingFunction, path, settings: SolveSettings | None = None) -> Estimate:
    """Solve ``D_n G_n(theta) = 0`` by damped Newton from several starts.

    Returns the converged root with the smallest ``g_norm`` (ties broken by
    lexicographic theta).  Raises :class:`NoConvergence` if no start reaches
    ``tol_g``; per-start diagnostics are attached to the exception.
    """
    settings = settings or SolveSettings()
    if path.n < 1:
        raise ValueError("path needs at least two observations")
    problem = _Problem(ef, path, settings)
    results, diagnostics = [], []
    for start in settings.starts():
        est, diag = _solve_from(problem, start, settings)
        diagnostics.append(diag)
        if est is not None:
            results.append(est)
    converged = [e for e in results if e.converged]
    if not converged:
        best = min(results, key=lambda e: e.g_norm, default=None)
        msg = "no start converged" + ("" if best is None else f"; best g_norm {best.g_norm:.3g} at {best.theta_hat}")
        logger.debug("%s: %s", msg, diagnostics)
        raise NoConvergence(msg, diagnostics)
    best = min(converged, key=lambda e: (e.g_norm, tuple(e.theta_hat)))
    best.diagnostics = diagnostics
    return best
