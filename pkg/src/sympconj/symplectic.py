"""The symplectic space R^n + R^n*, Lagrangian frames and Grassmannian charts.

Coordinate convention, fixed once for the whole package: a vector is stored
as ``(v, alpha)`` with the n "position" components first, and the symplectic
form is ``omega(z1, z2) = alpha2(v1) - alpha1(v2) = z1^T J z2`` with

    J = [[0, Id], [-Id, 0]].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .symform import SymmetricForm

__all__ = [
    "canonical_J",
    "omega",
    "assemble_sp",
    "split_sp",
    "sp_membership_defect",
    "is_symplectic",
    "symplectic_inverse",
    "LagrangianFrame",
    "intersection_dim",
    "chart",
    "chart_inverse",
    "complement_with_chart_value",
]

DEFAULT_RANK_TOL = 1e-8
DEFAULT_SYMP_TOL = 1e-8


def canonical_J(n: int) -> np.ndarray:
    """Matrix of the canonical symplectic form in (v, alpha) block coordinates."""
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def omega(z1, z2) -> float:
    """Canonical symplectic form alpha2(v1) - alpha1(v2)."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape or z1.ndim != 1 or z1.size % 2:
        raise ValueError(f"incompatible shapes {z1.shape}, {z2.shape}")
    n = z1.size // 2
    return float(z1[:n] @ z2[n:] - z2[:n] @ z1[n:])


def assemble_sp(A, B, C) -> np.ndarray:
    """Assemble the sp(2n, R) element [[A, B], [C, -A^T]] from its blocks."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float) if not isinstance(B, SymmetricForm) else B.entries
    C = np.asarray(C, dtype=float) if not isinstance(C, SymmetricForm) else C.entries
    n = A.shape[0]
    X = np.zeros((2 * n, 2 * n))
    X[:n, :n] = A
    X[:n, n:] = B
    X[n:, :n] = C
    X[n:, n:] = -A.T
    return X


def split_sp(X) -> tuple[np.ndarray, SymmetricForm, SymmetricForm]:
    """Recover the (A, B, C) blocks of an sp(2n, R) element."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0] // 2
    return X[:n, :n].copy(), SymmetricForm(X[:n, n:]), SymmetricForm(X[n:, :n])


def sp_membership_defect(X) -> float:
    """max-abs norm of X^T J + J X; zero exactly on the Lie algebra sp(2n, R)."""
    X = np.asarray(X, dtype=float)
    J = canonical_J(X.shape[0] // 2)
    return float(np.max(np.abs(X.T @ J + J @ X)))


def is_symplectic(M, tol: float = DEFAULT_SYMP_TOL) -> tuple[bool, float]:
    """Check M^T J M = J; returns (ok, drift) with drift in spectral norm."""
    M = np.asarray(M, dtype=float)
    J = canonical_J(M.shape[0] // 2)
    drift = float(np.linalg.norm(M.T @ J @ M - J, ord=2))
    return drift <= tol, drift


def symplectic_inverse(M) -> np.ndarray:
    """Group inverse J^-1 M^T J of a symplectic matrix (no linear solve)."""
    M = np.asarray(M, dtype=float)
    J = canonical_J(M.shape[0] // 2)
    return -J @ M.T @ J


@dataclass(frozen=True)
class LagrangianFrame:
    """A 2n-by-n full-rank frame spanning a Lagrangian subspace.

    Frames are compared as subspaces (via :func:`intersection_dim`), never
    entrywise.
    """

    columns: np.ndarray = field()

    ISOTROPY_TOL = 1e-10

    def __init__(self, columns, rank_tol: float = DEFAULT_RANK_TOL):
        F = np.array(columns, dtype=float)
        if F.ndim != 2 or F.shape[0] != 2 * F.shape[1]:
            raise ValueError(f"expected a 2n-by-n frame, got shape {F.shape}")
        sv = np.linalg.svd(F, compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            raise ValueError("frame is rank deficient")
        J = canonical_J(F.shape[1])
        iso = np.max(np.abs(F.T @ J @ F)) / (sv[0] ** 2)
        if iso > self.ISOTROPY_TOL:
            raise ValueError(f"frame is not isotropic (defect {iso:.2e})")
        F.setflags(write=False)
        object.__setattr__(self, "columns", F)

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    def orthonormalized(self) -> np.ndarray:
        """Thin QR with positive-diagonal sign fix; returns the Q factor."""
        return orthonormal_frame(self.columns)

    @staticmethod
    def L0(n: int) -> "LagrangianFrame":
        """The distinguished Lagrangian {0} + R^n*."""
        return LagrangianFrame(np.vstack([np.zeros((n, n)), np.eye(n)]))

    @staticmethod
    def horizontal(n: int) -> "LagrangianFrame":
        """The complement R^n + {0}."""
        return LagrangianFrame(np.vstack([np.eye(n), np.zeros((n, n))]))


def orthonormal_frame(F) -> np.ndarray:
    """Thin QR of a frame with the R-diagonal forced positive."""
    Q, R = np.linalg.qr(np.asarray(F, dtype=float))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _frame_columns(L) -> np.ndarray:
    if isinstance(L, LagrangianFrame):
        return L.columns
    return np.asarray(L, dtype=float)


def intersection_dim(L1, L2, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """dim(span L1 intersect span L2), via the rank of the stacked frame.

    Frames are orthonormalized first so the relative singular-value
    threshold is well conditioned.
    """
    F1 = orthonormal_frame(_frame_columns(L1))
    F2 = orthonormal_frame(_frame_columns(L2))
    if F1.shape != F2.shape:
        raise ValueError("frames have mismatched dimensions")
    stacked = np.hstack([F1, F2])
    sv = np.linalg.svd(stacked, compute_uv=False)
    rank = int(np.sum(sv > rank_tol * sv[0]))
    return 2 * F1.shape[1] - rank


def _graph_coords(F0, F1, L) -> tuple[np.ndarray, np.ndarray]:
    """Split columns of L over the decomposition span(F0) + span(F1)."""
    M = np.hstack([F0, F1])
    n = F0.shape[1]
    CD = np.linalg.solve(M, L)
    return CD[:n], CD[n:]


def chart(xi0, xi1, L, rank_tol: float = DEFAULT_RANK_TOL) -> SymmetricForm:
    """Chart value of L in the Lagrangian decomposition (xi0, xi1).

    Returns omega(T ., .) restricted to xi0 x xi0 in the basis of xi0's
    columns, where T: xi0 -> xi1 is the map whose graph is L.  Vanishes at
    the chart center L = xi0.
    """
    F0 = _frame_columns(xi0)
    F1 = _frame_columns(xi1)
    FL = _frame_columns(L)
    n = F0.shape[1]
    if intersection_dim(F0, F1, rank_tol) != 0:
        raise ValueError("(xi0, xi1) is not a Lagrangian decomposition")
    C, D = _graph_coords(F0, F1, FL)
    svC = np.linalg.svd(C, compute_uv=False)
    if svC[-1] <= rank_tol * max(svC[0], 1e-300):
        raise ValueError("L is not transverse to xi1 (outside the chart domain)")
    Tc = D @ np.linalg.inv(C)
    J = canonical_J(n)
    S = Tc.T @ (F1.T @ J @ F0)
    asym = np.max(np.abs(S - S.T)) / max(1.0, np.max(np.abs(S)))
    if asym > 1e-8:
        raise ValueError(f"chart value not symmetric (defect {asym:.2e}); "
                         "inputs are not Lagrangian frames")
    return SymmetricForm(S)


def chart_inverse(xi0, xi1, S) -> LagrangianFrame:
    """The unique Lagrangian transverse to xi1 with chart value S."""
    F0 = _frame_columns(xi0)
    F1 = _frame_columns(xi1)
    Smat = S.entries if isinstance(S, SymmetricForm) else np.asarray(S, dtype=float)
    J = canonical_J(F0.shape[1])
    K = F1.T @ J @ F0
    Tc = np.linalg.solve(K.T, Smat)
    return LagrangianFrame(F0 + F1 @ Tc)


def complement_with_chart_value(L, xi0, P,
                                rank_tol: float = DEFAULT_RANK_TOL) -> LagrangianFrame:
    """A Lagrangian xi1 transverse to both xi0 and L with chart(xi0, xi1, L) = P.

    P must be nondegenerate and L transverse to xi0.  Construction: in
    symplectic coordinates where xi0 = {0} + R^n* and L is the graph
    {(S gamma, gamma)}, the complement is the graph of T = S (I - P^-1 S)^-1;
    the chart equation is then verified by a round trip.
    """
    F0 = _frame_columns(xi0)
    FL = _frame_columns(L)
    n = F0.shape[1]
    Pmat = P.entries if isinstance(P, SymmetricForm) else np.asarray(P, dtype=float)
    if intersection_dim(FL, F0, rank_tol) != 0:
        raise ValueError("L is not transverse to xi0")
    sv = np.linalg.svd(Pmat, compute_uv=False)
    if sv[-1] <= rank_tol * sv[0]:
        raise ValueError("prescribed chart value P is degenerate")

    # Symplectic change of coordinates sending L0 to xi0.
    F0q = orthonormal_frame(F0)
    J = canonical_J(n)
    M = np.hstack([J @ F0q, F0q])          # symplectic: M(L0) = xi0
    Lp = symplectic_inverse(M) @ FL        # L in the new coordinates
    top, bot = Lp[:n], Lp[n:]
    # transversality of L to xi0 = M(L0) makes the top block invertible, so
    # L is the graph {(v, S v)} over the horizontal leg with S symmetric
    Smat = bot @ np.linalg.inv(top)
    Smat = 0.5 * (Smat + Smat.T)

    # Chart value P is prescribed in the basis of xi0's given columns; move
    # the target to the orthonormal working basis F0q = F0 G^-1.
    G = np.linalg.solve(F0q.T @ F0q, F0q.T @ F0)   # F0 = F0q G
    P_orth = np.linalg.solve(G.T, Pmat) @ np.linalg.inv(G)
    P_orth = 0.5 * (P_orth + P_orth.T)

    # the graph of T = S - P^-1 is transverse to both legs by construction
    # (xi1 meets L only where P^-1 vanishes) and needs no extra conditions
    T = Smat - np.linalg.inv(P_orth)
    xi1 = LagrangianFrame(M @ np.vstack([np.eye(n), T]))

    achieved = chart(F0, xi1.columns, FL).entries
    defect = np.max(np.abs(achieved - Pmat)) / max(1.0, np.max(np.abs(Pmat)))
    if defect > 1e-9:
        raise ValueError(f"chart round-trip failed (defect {defect:.2e})")
    return xi1
