"""Real symmetric bilinear forms: inertia, degeneracy distance, fixed-inertia paths.

These are the scalar building blocks used by the Lagrangian charts and the
index computations: every chart value, crossing form and derivative form in
the rest of the package is carried by a :class:`SymmetricForm`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SymmetricForm",
    "inertia",
    "distance_to_degenerate",
    "index_path",
    "index_path_evaluator",
]

DEFAULT_ZERO_TOL = 1e-9


@dataclass(frozen=True)
class SymmetricForm:
    """An n-by-n real symmetric bilinear form.

    The matrix is symmetrized on construction, so ``entries[i, j] ==
    entries[j, i]`` holds exactly.
    """

    entries: np.ndarray = field()

    def __init__(self, entries):
        M = np.asarray(entries, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {M.shape}")
        M = 0.5 * (M + M.T)
        M.setflags(write=False)
        object.__setattr__(self, "entries", M)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.array(self.entries, dtype=dtype)

    @staticmethod
    def zero(n: int) -> "SymmetricForm":
        return SymmetricForm(np.zeros((n, n)))

    @staticmethod
    def identity(n: int) -> "SymmetricForm":
        return SymmetricForm(np.eye(n))


def _as_sym_matrix(S) -> np.ndarray:
    if isinstance(S, SymmetricForm):
        return S.entries
    M = np.asarray(S, dtype=float)
    return 0.5 * (M + M.T)


def inertia(S, zero_tol: float = DEFAULT_ZERO_TOL) -> tuple[int, int, int]:
    """Counts (n_plus, n_minus, n_zero) of eigenvalues of a symmetric form.

    The zero band is relative: eigenvalues within ``zero_tol * |lambda|_max``
    of zero count as zero.  For the zero form every eigenvalue counts as zero.
    """
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    M = _as_sym_matrix(S)
    w = np.linalg.eigvalsh(M)
    scale = np.max(np.abs(w)) if w.size else 0.0
    if scale == 0.0:
        return (0, 0, M.shape[0])
    band = zero_tol * scale
    n_plus = int(np.sum(w > band))
    n_minus = int(np.sum(w < -band))
    return (n_plus, n_minus, M.shape[0] - n_plus - n_minus)


def distance_to_degenerate(S) -> float:
    """Spectral-norm distance from S to the nearest degenerate symmetric form.

    Equals the smallest singular value of S, i.e. the smallest absolute
    eigenvalue for a symmetric matrix.
    """
    M = _as_sym_matrix(S)
    w = np.linalg.eigvalsh(M)
    return float(np.min(np.abs(w))) if w.size else 0.0


def _spectral_data_2x2(M: np.ndarray):
    """Eigendecomposition of a symmetric 2x2 with a canonical angle.

    Returns (lams, theta) with ``M = R(theta) diag(lams) R(theta)^T``,
    eigenvalues sorted descending and theta normalized to [0, pi).
    """
    w, V = np.linalg.eigh(M)
    order = np.argsort(w)[::-1]
    w = w[order]
    V = V[:, order]
    theta = float(np.arctan2(V[1, 0], V[0, 0])) % np.pi
    return w, theta


def index_path_evaluator(S0, S1):
    """Smooth path s in [0,1] -> SymmetricForm from S0 to S1 (n = 2 only).

    Both endpoints must be nondegenerate with equal inertia; every point of
    the path then has that same inertia.  Eigenvalue magnitudes are
    interpolated log-linearly with fixed signs, the eigenvector rotation
    angle linearly (shortest representative mod pi).
    """
    M0 = _as_sym_matrix(S0)
    M1 = _as_sym_matrix(S1)
    if M0.shape != (2, 2) or M1.shape != (2, 2):
        raise ValueError("index_path is implemented for n = 2 only")
    in0 = inertia(M0)
    in1 = inertia(M1)
    if in0[2] or in1[2]:
        raise ValueError("index_path endpoints must be nondegenerate")
    if in0 != in1:
        raise ValueError(f"inertia mismatch: {in0} vs {in1}")

    w0, th0 = _spectral_data_2x2(M0)
    w1, th1 = _spectral_data_2x2(M1)
    # Descending eigenvalue order makes the sign patterns agree when the
    # inertias agree.
    signs = np.sign(w0)
    if not np.array_equal(signs, np.sign(w1)):  # pragma: no cover
        raise ValueError("eigenvalue sign patterns disagree")
    logm0 = np.log(np.abs(w0))
    logm1 = np.log(np.abs(w1))
    dth = th1 - th0
    if dth > np.pi / 2:
        dth -= np.pi
    elif dth < -np.pi / 2:
        dth += np.pi

    def path(s: float) -> SymmetricForm:
        lam = signs * np.exp((1.0 - s) * logm0 + s * logm1)
        th = th0 + s * dth
        c, sn = np.cos(th), np.sin(th)
        R = np.array([[c, -sn], [sn, c]])
        return SymmetricForm(R @ np.diag(lam) @ R.T)

    return path


def index_path(S0, S1, steps: int) -> list[SymmetricForm]:
    """Sampled fixed-inertia path from S0 to S1 (n = 2), ``steps + 1`` samples."""
    if steps < 1:
        raise ValueError("steps must be positive")
    path = index_path_evaluator(S0, S1)
    return [path(s) for s in np.linspace(0.0, 1.0, steps + 1)]
