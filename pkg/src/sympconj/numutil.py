"""Grids, finite-difference stencils, quadrature and smooth cutoff helpers."""

from __future__ import annotations

import numpy as np

__all__ = [
    "uniform_grid",
    "central_derivative",
    "derivative_curve",
    "simpson_weights",
    "cumulative_simpson",
    "smooth_ramp",
    "smoothstep",
]


def uniform_grid(a: float, b: float, N: int) -> np.ndarray:
    """N+1 uniformly spaced nodes on [a, b]."""
    if not b > a:
        raise ValueError("need a < b")
    if N < 2:
        raise ValueError("need at least 2 steps")
    return np.linspace(float(a), float(b), N + 1)


def central_derivative(values: np.ndarray, h: float, order: int = 2) -> np.ndarray:
    """Differentiate samples on a uniform grid along axis 0.

    Interior points use the central stencil of the requested order (2 or 4);
    boundary points fall back to one-sided stencils of matching order.
    """
    v = np.asarray(values, dtype=float)
    N = v.shape[0] - 1
    d = np.empty_like(v)
    if order == 2:
        if N < 2:
            raise ValueError("grid too short for a 3-point stencil")
        d[1:-1] = (v[2:] - v[:-2]) / (2 * h)
        d[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
        d[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    elif order == 4:
        if N < 4:
            raise ValueError("grid too short for a 5-point stencil")
        d[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
        # 4th-order one-sided / offset stencils at the edges
        d[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * h)
        d[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * h)
        d[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * h)
        d[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * h)
    else:
        raise ValueError("order must be 2 or 4")
    return d


def derivative_curve(f, t: float, h: float, order: int = 2):
    """Derivative of a callable at one point by a central stencil."""
    if order == 2:
        return (np.asarray(f(t + h)) - np.asarray(f(t - h))) / (2 * h)
    if order == 4:
        return (np.asarray(f(t - 2 * h)) - 8 * np.asarray(f(t - h))
                + 8 * np.asarray(f(t + h)) - np.asarray(f(t + 2 * h))) / (12 * h)
    raise ValueError("order must be 2 or 4")


def simpson_weights(N: int, h: float) -> np.ndarray:
    """Composite Simpson weights on N+1 uniform nodes (N even required)."""
    if N % 2:
        raise ValueError("composite Simpson needs an even step count")
    w = np.ones(N + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def cumulative_simpson(samples: np.ndarray, h: float) -> np.ndarray:
    """Cumulative integral of uniformly sampled values along axis 0.

    Node k holds the integral from node 0 to node k; odd prefixes close the
    last panel with the 3/8-free trapezoid-corrected Simpson variant
    (Simpson over the even prefix plus one 3-point right-panel rule), so the
    result is 4th-order accurate at every node.
    """
    v = np.asarray(samples, dtype=float)
    N = v.shape[0] - 1
    out = np.zeros_like(v)
    if N == 0:
        return out
    if N == 1:
        out[1] = (h / 2.0) * (v[0] + v[1])
        return out
    # even nodes: cumulative sum of full Simpson panels
    panels = (h / 3.0) * (v[0:-2:2] + 4.0 * v[1:-1:2] + v[2::2])
    out[2::2] = np.cumsum(panels, axis=0)
    # odd nodes: previous even node plus the right half-panel of the
    # quadratic through the three trailing nodes
    out[1] = (h / 12.0) * (5.0 * v[0] + 8.0 * v[1] - v[2])
    if N >= 3:
        kk = np.arange(3, N + 1, 2)
        out[kk] = out[kk - 1] + (h / 12.0) * (-v[kk - 2] + 8.0 * v[kk - 1]
                                              + 5.0 * v[kk])
    return out


def smooth_ramp(x):
    """exp(-1/x) for x > 0, 0 otherwise; the standard flat C-infinity ramp."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(arr)
    pos = arr > 0
    out[pos] = np.exp(-1.0 / arr[pos])
    return float(out[0]) if np.asarray(x).ndim == 0 else out


def smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, strictly monotone between."""
    r1 = smooth_ramp(np.asarray(x, dtype=float))
    r2 = smooth_ramp(1.0 - np.asarray(x, dtype=float))
    return r1 / (r1 + r2)
