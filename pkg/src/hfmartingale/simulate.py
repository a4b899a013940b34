"""Equidistant sample paths and high-frequency sampling schedules."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .exceptions import StateSpaceError
from .model import DiffusionModel, as_param

SCHEMES = ("euler", "milstein", "exact")


@dataclass(frozen=True)
class SamplePath:
    values: np.ndarray
    delta: float
    seed: int | None = None
    scheme: str = "data"
    substeps: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a sample path needs at least two observations")
        if not self.delta > 0:
            raise ValueError(f"sampling step must be positive, got {self.delta}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(self.values.size)

    @property
    def x(self) -> np.ndarray:
        """Left end points X_{i-1}."""
        return self.values[:-1]

    @property
    def y(self) -> np.ndarray:
        """Right end points X_i."""
        return self.values[1:]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "time", "value"])
            for i, (t, v) in enumerate(zip(self.times, self.values)):
                writer.writerow([i, repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "SamplePath":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: need at least two rows")
        times = np.array([float(r["time"]) for r in rows])
        values = np.array([float(r["value"]) for r in rows])
        steps = np.diff(times)
        delta = float(np.mean(steps))
        if not np.allclose(steps, delta, rtol=1e-6, atol=1e-12):
            raise ValueError(f"{path}: observations are not equidistant")
        return cls(values, delta)


@dataclass(frozen=True)
class SamplingRule:
    """Delta_n = c * n ** (-rho) with 1/3 < rho < 1."""

    c: float = 1.0
    rho: float = 0.6

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not 1.0 / 3.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (1/3, 1), got {self.rho}")


def sampling_schedule(rule: SamplingRule, n: int) -> float:
    if n < 1:
        raise ValueError("n must be a positive integer")
    return rule.c * float(n) ** (-rule.rho)


def default_substeps(delta: float, scheme: str) -> int:
    if scheme == "exact":
        return 1
    return 10 if delta >= 1e-3 else 1


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(master_seed: int, *keys: int) -> int:
    """64-bit seed for the stream keyed by ``(master_seed, *keys)``, independent of execution order."""
    ss = np.random.SeedSequence([int(master_seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _exact_ou(model, theta, n, delta, x0, rng):
    a = math.exp(-theta[0] * delta)
    sd = math.sqrt(float(model.cond_var(delta, 0.0, theta)))
    shocks = sd * rng.standard_normal(n)
    out = np.empty(n + 1)
    out[0] = x0
    out[1:], _ = signal.lfilter([1.0], [1.0, -a], shocks, zi=[a * x0])
    return out


def _stepper(model: DiffusionModel, theta, scheme: str, h: float):
    lo, hi = model.interval.lower, model.interval.upper
    clip = model.truncate_boundary
    sqrt_h = math.sqrt(h)

    def coef(x):
        return min(max(x, lo), hi) if clip else x

    if scheme == "euler":
        def step(x, z):
            xc = coef(x)
            return x + float(model.b(xc, theta)) * h + float(model.sigma(xc, theta)) * sqrt_h * z
    else:
        def step(x, z):
            xc = coef(x)
            dv = float(model.jet("v", xc, theta, 1)[1])
            return (x + float(model.b(xc, theta)) * h + float(model.sigma(xc, theta)) * sqrt_h * z
                    + 0.25 * dv * h * (z * z - 1.0))
    return step


def simulate_path(model: DiffusionModel, theta, n: int, delta: float, substeps: int | None = None,
                  seed: int = 0, scheme: str = "euler", x0: float | None = None) -> SamplePath:
    """Simulate X_0, X_delta, ..., X_{n delta}.

    The initial value is drawn from the stationary law unless ``x0`` is given.
    Non-exact schemes integrate with step ``delta / substeps``; for models with
    a truncating boundary the coefficients see the state clipped to the closed
    interval and the recorded values are clipped the same way.
    """
    theta = as_param(theta)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if n < 1:
        raise ValueError("n must be a positive integer")
    if scheme == "exact" and not model.gaussian_transition:
        raise ValueError(f"exact scheme is not available for model {model.name!r}")
    if substeps is None:
        substeps = default_substeps(delta, scheme)
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    model.check_assumptions(theta)
    rng = make_rng(seed)
    if x0 is None:
        x0 = model.sample_stationary(theta, rng)
    x0 = float(x0)
    model.interval.check(x0, closed=True, what="initial value")

    if scheme == "exact":
        values = _exact_ou(model, theta, n, delta, x0, rng)
    else:
        h = delta / substeps
        step = _stepper(model, theta, scheme, h)
        shocks = rng.standard_normal((n, substeps))
        values = np.empty(n + 1)
        values[0] = x = x0
        lo, hi = model.interval.lower, model.interval.upper
        for i in range(n):
            for z in shocks[i]:
                x = step(x, float(z))
            values[i + 1] = min(max(x, lo), hi) if model.truncate_boundary else x
    if not np.all(np.isfinite(values)) or not np.all(model.interval.contains(values, closed=True)):
        raise StateSpaceError(f"simulated path escaped the state interval under scheme {scheme!r}")
    return SamplePath(values, float(delta), seed=seed, scheme=scheme, substeps=int(substeps))
