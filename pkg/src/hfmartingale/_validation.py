"""Input validation shared by the estimator and the CLI."""

from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array

from .model import ParamPoint, as_param


def check_path_values(X) -> np.ndarray:
    """Return observations as a finite 1-d float array with at least two entries.

    Accepts a 1-d array or a single-column 2-d array.
    """
    arr = check_array(X, ensure_2d=False, dtype=np.float64, ensure_all_finite=True, input_name="X")
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"expected a single observed coordinate, got {arr.shape[1]} columns")
        arr = arr[:, 0]
    if arr.shape[0] < 2:
        raise ValueError("need at least two observations")
    return np.ascontiguousarray(arr)


def check_delta(delta) -> float:
    delta = float(delta)
    if not (math.isfinite(delta) and delta > 0):
        raise ValueError(f"sampling step delta must be positive and finite, got {delta}")
    return delta


def check_theta(theta, name: str = "theta") -> ParamPoint:
    try:
        theta = as_param(theta)
    except (TypeError, ValueError, KeyError) as exc:
        raise ValueError(f"{name} must be a pair (alpha, beta) or a dict with those keys") from exc
    if not all(math.isfinite(t) for t in theta):
        raise ValueError(f"{name} must be finite, got {tuple(theta)}")
    if theta.beta <= 0:
        raise ValueError(f"{name}: beta must be positive, got {theta.beta}")
    return theta


def parse_pair(text: str) -> tuple:
    """Parse ``"a,b"`` into two floats."""
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def parse_floats(text: str) -> list:
    return [float(p) for p in str(text).split(",") if p.strip()]
