"""Composite Simpson quadrature on sampled data."""
from __future__ import annotations

import numpy as np

__all__ = ["is_uniform", "cumulative_simpson", "simpson"]


def is_uniform(x: np.ndarray, rtol: float = 1e-9) -> bool:
    h = np.diff(x)
    return bool(np.all(np.abs(h - h[0]) <= rtol * abs(h[0])))


def cumulative_simpson(y, x) -> tuple[np.ndarray, bool]:
    """Running integral ``F[k] = int_{x[0]}^{x[k]} y dx``.

    On a uniform grid each pair of intervals is integrated with Simpson's
    rule; the single interval up to an odd-indexed point uses the four-point
    cubic rule, so every entry carries a fifth-order local error.  On an
    uneven grid the cumulative trapezoid rule is used instead and the second
    return value is ``True`` (a fallback flag for reports).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = x.size
    if y.shape[0] != n:
        raise ValueError("y and x lengths differ")
    if n < 3:
        raise ValueError("need at least 3 samples")
    if not is_uniform(x):
        steps = 0.5 * (y[1:] + y[:-1]) * np.diff(x).reshape((-1,) + (1,) * (y.ndim - 1))
        return np.concatenate([np.zeros((1,) + y.shape[1:]), np.cumsum(steps, axis=0)]), True

    if n < 4:
        raise ValueError("need at least 4 samples on a uniform grid")
    h = (x[-1] - x[0]) / (n - 1)
    F = np.zeros_like(y)
    m = (n - 1) // 2  # complete interval pairs
    pairs = h / 3.0 * (y[0 : 2 * m : 2] + 4.0 * y[1 : 2 * m : 2] + y[2 : 2 * m + 1 : 2])
    even = np.concatenate([np.zeros((1,) + y.shape[1:]), np.cumsum(pairs, axis=0)])
    F[0 : 2 * m + 1 : 2] = even
    # [x_{2k}, x_{2k+1}] from the cubic through x_{2k-1} .. x_{2k+2}
    F[1] = h / 24.0 * (9.0 * y[0] + 19.0 * y[1] - 5.0 * y[2] + y[3])
    if m > 1:
        k = np.arange(1, m)
        i = 2 * k
        F[i + 1] = even[k] + h / 24.0 * (-y[i - 1] + 13.0 * y[i] + 13.0 * y[i + 1] - y[i + 2])
    if n % 2 == 0:
        F[-1] = F[-2] + h / 24.0 * (y[-4] - 5.0 * y[-3] + 19.0 * y[-2] + 9.0 * y[-1])
    return F, False


def simpson(y, x) -> float:
    """Definite integral over the whole grid (see :func:`cumulative_simpson`)."""
    F, _ = cumulative_simpson(y, x)
    return F[-1]
