"""Hot integration kernels with a compiled core and a pure-Python fallback.

The fixed-step propagation of a linear matrix ODE is the inner loop of every
detector and reduction run.  The step matrices are assembled in batch with
numpy (see :func:`rk4_step_matrices`); the sequential accumulation
``Phi_{k+1} = S_k Phi_k`` with symplectic drift monitoring and reprojection
lives either in the Cython extension ``_core`` or in the numpy fallback,
whichever imports.  Both expose the same ``accumulate_left_products``
contract, and ``BACKEND`` records which one won.
"""

from __future__ import annotations

import numpy as np

from . import fallback as _fallback

try:  # pragma: no cover - depends on the build environment
    from . import _core as _compiled

    BACKEND = "compiled"
    _impl = _compiled
except ImportError:  # pragma: no cover
    _compiled = None
    BACKEND = "fallback"
    _impl = _fallback

__all__ = [
    "BACKEND",
    "accumulate_left_products",
    "available_backends",
    "rk4_step_matrices",
    "propagate",
    "DriftCeilingError",
]

REPROJECT_TRIGGER = 1e-10
DRIFT_CEILING = 1e-6
MAX_FIX_ITERS = 4


class DriftCeilingError(RuntimeError):
    """Symplectic drift exceeded the hard ceiling; the grid is too coarse."""


def available_backends() -> dict:
    backends = {"fallback": _fallback}
    if _compiled is not None:
        backends["compiled"] = _compiled
    return backends


def rk4_step_matrices(X_half: np.ndarray, h: float) -> np.ndarray:
    """One-step transition matrices of Phi' = X(t) Phi for the classical RK4.

    ``X_half`` holds X sampled at half-step resolution: shape (2N+1, m, m)
    with X_half[2k] = X(t_k) and X_half[2k+1] = X(t_k + h/2).  Because the
    ODE is linear the whole batch is assembled with matmul, leaving only the
    cumulative product to the sequential kernel.
    """
    X1 = X_half[0:-1:2]
    X2 = X_half[1::2]
    X3 = X_half[2::2]
    m = X_half.shape[1]
    eye = np.eye(m)
    k1 = X1
    k2 = X2 @ (eye + (0.5 * h) * k1)
    k3 = X2 @ (eye + (0.5 * h) * k2)
    k4 = X3 @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def accumulate_left_products(steps, J=None, trigger=REPROJECT_TRIGGER,
                             ceiling=DRIFT_CEILING, backend=None):
    """Cumulative products Phi_k = S_{k-1} ... S_0 with optional reprojection.

    With ``J`` given, the symplectic defect Phi^T J Phi - J is monitored in
    max-abs norm after every step; above ``trigger`` the first-order
    restoration Phi <- Phi - 1/2 J^-1 Phi^-T (Phi^T J Phi - J) is applied
    (Phi^-T through the symplectic inverse), iterated up to a few times.

    Returns (Phi, max_drift) with Phi of shape (N+1, m, m), Phi[0] = Id.
    Raises DriftCeilingError when the post-fix drift exceeds ``ceiling``.
    """
    steps = np.ascontiguousarray(steps, dtype=np.float64)
    impl = _impl if backend is None else available_backends()[backend]
    if J is None:
        Jc = np.zeros((0, 0))
        trigger = np.inf
    else:
        Jc = np.ascontiguousarray(J, dtype=np.float64)
    Phi, max_drift, ok = impl.accumulate(steps, Jc, float(trigger),
                                         float(ceiling), MAX_FIX_ITERS)
    if not ok:
        raise DriftCeilingError(
            f"symplectic drift {max_drift:.3e} above ceiling {ceiling:.1e}")
    return Phi, float(max_drift)


def propagate(X_half, h, J=None, trigger=REPROJECT_TRIGGER,
              ceiling=DRIFT_CEILING, backend=None):
    """RK4 propagation of Phi' = X Phi, Phi(a) = Id, on a uniform grid."""
    steps = rk4_step_matrices(np.asarray(X_half, dtype=np.float64), h)
    return accumulate_left_products(steps, J=J, trigger=trigger,
                                    ceiling=ceiling, backend=backend)
