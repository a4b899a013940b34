"""Truncated Taylor jets and finite-difference helpers.

A jet of degree K at a point x0 is the array ``c`` of Taylor coefficients
``c[k] = h^(k)(x0) / k!`` with shape ``(K + 1,) + x0.shape``.  Products and
derivatives of jets are exact polynomial operations, which lets the generator
be iterated without nesting numerical derivatives.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

EPS = np.finfo(float).eps


def degree(jet: np.ndarray) -> int:
    return jet.shape[0] - 1


def deriv(jet: np.ndarray) -> np.ndarray:
    k = np.arange(1, jet.shape[0]).reshape((-1,) + (1,) * (jet.ndim - 1))
    return jet[1:] * k


def mul(a: np.ndarray, b: np.ndarray, K: int | None = None) -> np.ndarray:
    if K is None:
        K = min(degree(a), degree(b))
    if K > degree(a) or K > degree(b):
        raise ValueError("jet degree too small for requested product")
    shape = np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros((K + 1,) + shape, dtype=np.result_type(a, b))
    for k in range(K + 1):
        for i in range(k + 1):
            out[k] = out[k] + a[i] * b[k - i]
    return out


def generator(b: np.ndarray, v: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Jet of ``b f' + v f'' / 2`` (two degrees lower than ``f``)."""
    K = degree(f) - 2
    if K < 0:
        raise ValueError("jet of degree >= 2 required")
    d1 = deriv(f)
    d2 = deriv(d1)
    return mul(b[: K + 1], d1[: K + 1], K) + 0.5 * mul(v[: K + 1], d2, K)


def constant(value, K: int) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    out = np.zeros((K + 1,) + value.shape)
    out[0] = value
    return out


def identity(x, K: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((K + 1,) + x.shape)
    out[0] = x
    if K >= 1:
        out[1] = 1.0
    return out


def polynomial(coeffs, x, K: int) -> np.ndarray:
    """Jet of ``sum_j coeffs[j] z**j`` at ``z = x``."""
    x = np.asarray(x, dtype=float)
    coeffs = list(coeffs)
    out = np.zeros((K + 1,) + x.shape)
    poly = np.polynomial.Polynomial(coeffs)
    fact = 1.0
    for k in range(K + 1):
        if k > 0:
            fact *= k
            poly = poly.deriv()
        out[k] = poly(x) / fact
    return out


@lru_cache(maxsize=None)
def _interp_weights(p: int) -> np.ndarray:
    nodes = np.arange(-p, p + 1, dtype=float)
    vander = np.vander(nodes, increasing=True)
    return np.linalg.inv(vander)


def fd_jet(func, x, K: int, *, lower=-np.inf, upper=np.inf) -> np.ndarray:
    """Taylor coefficients of a vectorized ``func`` up to degree ``K``.

    Uses polynomial interpolation on ``2p + 1`` equispaced nodes.  The step is
    chosen to balance truncation against rounding and shrunk near finite
    boundaries so that all nodes stay inside ``(lower, upper)``.
    """
    x = np.asarray(x, dtype=float)
    p = K // 2 + 2
    step = EPS ** (1.0 / (2 * p + 1)) * np.maximum(1.0, np.abs(x))
    room = np.minimum(x - lower, upper - x)
    step = np.minimum(step, room / (p + 1))
    weights = _interp_weights(p)
    values = np.stack([func(x + j * step) for j in range(-p, p + 1)])
    out = np.tensordot(weights, values, axes=(1, 0))[: K + 1]
    scale = step ** np.arange(K + 1).reshape((-1,) + (1,) * x.ndim)
    return out / scale


# Five-point central stencils.
def d1_central(func, x, h):
    return (-func(x + 2 * h) + 8 * func(x + h) - 8 * func(x - h) + func(x - 2 * h)) / (12 * h)


def d2_central(func, x, h):
    return (
        -func(x + 2 * h) + 16 * func(x + h) - 30 * func(x) + 16 * func(x - h) - func(x - 2 * h)
    ) / (12 * h * h)


def forward_derivatives(values, h):
    """First and second derivatives at 0 from samples at 0, h, 2h, 3h."""
    g0, g1, g2, g3 = values
    first = (-11 * g0 + 18 * g1 - 9 * g2 + 2 * g3) / (6 * h)
    second = (2 * g0 - 5 * g1 + 4 * g2 - g3) / (h * h)
    return first, second
