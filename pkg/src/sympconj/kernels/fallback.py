"""Pure-numpy accumulation kernel, used when the compiled core is absent."""

from __future__ import annotations

import numpy as np


def _drift(Phi: np.ndarray, J: np.ndarray) -> tuple[float, np.ndarray]:
    E = Phi.T @ J @ Phi - J
    return float(np.max(np.abs(E))), E


def accumulate(steps: np.ndarray, J: np.ndarray, trigger: float,
               ceiling: float, max_fix_iters: int):
    """Same contract as the compiled ``_core.accumulate``.

    steps: (N, m, m) one-step matrices; J: (m, m) or empty (no monitoring).
    Returns (Phi (N+1, m, m), max_drift, ok).
    """
    N, m, _ = steps.shape
    Phi = np.empty((N + 1, m, m))
    cur = np.eye(m)
    Phi[0] = cur
    monitor = J.size > 0 and np.isfinite(trigger)
    max_drift = 0.0
    ok = True
    if monitor:
        half_J = 0.5 * J  # -1/2 J^-1 = 1/2 J for the canonical form
    for k in range(N):
        cur = steps[k] @ cur
        if monitor:
            d, E = _drift(cur, J)
            if d > trigger:
                for _ in range(max_fix_iters):
                    # Phi - 1/2 J^-1 Phi^-T E, with Phi^-T approximated by the
                    # symplectic inverse transpose (J^-1 Phi^T J)^T = -J Phi J;
                    # exact enough for first-order restoration of the
                    # quadratic constraint.
                    inv_T = -J @ cur @ J
                    cur = cur + half_J @ (inv_T @ E)
                    d, E = _drift(cur, J)
                    if d <= trigger:
                        break
            if d > max_drift:
                max_drift = d
            if d > ceiling:
                ok = False
        Phi[k + 1] = cur
    return Phi, max_drift, ok
