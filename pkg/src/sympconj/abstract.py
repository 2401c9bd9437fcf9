"""Abstract symplectic systems: curves of Lagrangians and realization.

An abstract system is the curve xi(t) = Phi(t)^-1(L0) in the Lagrangian
Grassmannian, normalized so that xi(a) = L0.  Conjugate instants are the
t with xi(t) /\\ xi(a) nontrivial; the derivative xi'(t) is a symmetric
bilinear form on xi(t) computed through a Grassmannian chart.  The
realization direction rebuilds a symplectic differential system whose
solution curve induces the given xi, making the correspondence between
differential systems and abstract systems effectively surjective.
"""

from __future__ import annotations

import numpy as np

from .numutil import central_derivative
from .sds import FundamentalMatrix, SympDiffSystem, fundamental_matrix
from .symform import SymmetricForm, inertia
from .symplectic import (
    LagrangianFrame,
    canonical_J,
    chart,
    intersection_dim,
    orthonormal_frame,
    symplectic_inverse,
)

__all__ = [
    "AbstractSystem",
    "FrameAlignmentError",
    "xi_from_system",
    "xi_derivative_form",
    "pushforward",
    "abstract_index",
    "abstract_instants",
    "realize_system",
]

ALIGN_MIN_SV = 1e-3


class FrameAlignmentError(RuntimeError):
    """Consecutive Lagrangian frames nearly orthogonal; grid too coarse."""


def _procrustes(F, F_prev):
    """Orthogonal Q minimizing ||F Q - F_prev|| in Frobenius norm."""
    U, sv, Vt = np.linalg.svd(F.T @ F_prev)
    if sv[-1] < ALIGN_MIN_SV:
        raise FrameAlignmentError(
            f"consecutive frames overlap with singular value {sv[-1]:.2e}")
    return U @ Vt


class AbstractSystem:
    """A sampled curve of Lagrangian frames on a uniform grid over [a, b].

    Frames are stored orthonormalized and aligned: each frame is rotated by
    the orthogonal Procrustes factor matching its predecessor, so finite
    differences across the grid see a continuous curve of matrices rather
    than arbitrary per-node basis choices.
    """

    def __init__(self, a, b, frames, provenance="", normalize_start=True):
        frames = np.asarray(frames, dtype=float)
        if frames.ndim != 3 or frames.shape[1] != 2 * frames.shape[2]:
            raise ValueError(f"expected (N+1, 2n, n) frames, got {frames.shape}")
        self.a = float(a)
        self.b = float(b)
        self.grid_N = frames.shape[0] - 1
        self.n = frames.shape[2]
        self.provenance = provenance

        n = self.n
        J = canonical_J(n)
        F0 = orthonormal_frame(frames[0])
        if normalize_start and intersection_dim(F0, LagrangianFrame.L0(n)) < n:
            # initial symplectic-orthogonal change of basis sending xi(a) to
            # L0: U = (JF | F) is orthogonal and symplectic, and U^T F = L0
            psi0 = np.hstack([J @ F0, F0]).T
            frames = np.einsum("ij,kjl->kil", psi0, frames)

        aligned = np.empty_like(frames)
        prev = None
        for k in range(frames.shape[0]):
            Q = orthonormal_frame(frames[k])
            if prev is not None:
                Q = Q @ _procrustes(Q, prev)
            aligned[k] = Q
            prev = Q
        self.frames = aligned
        # validate Lagrangian-ness of first/last/mid samples (cheap spot check;
        # the constructor of LagrangianFrame enforces isotropy and rank)
        for k in (0, self.grid_N // 2, self.grid_N):
            LagrangianFrame(self.frames[k])

    @property
    def grid(self):
        return np.linspace(self.a, self.b, self.grid_N + 1)

    @property
    def step(self):
        return (self.b - self.a) / self.grid_N

    def node_index(self, t):
        k = int(round((t - self.a) / self.step))
        return min(max(k, 0), self.grid_N)

    def frame_at(self, t):
        return self.frames[self.node_index(t)]

    def transformed(self, M):
        """The image curve under a fixed linear symplectomorphism M."""
        new = np.einsum("ij,kjl->kil", np.asarray(M, dtype=float), self.frames)
        return AbstractSystem(self.a, self.b, new,
                              provenance=self.provenance + "/transformed",
                              normalize_start=False)


def xi_from_system(X: SympDiffSystem, fm: FundamentalMatrix = None) -> AbstractSystem:
    """The curve xi(t) = Phi(t)^-1(L0) of a differential system."""
    if fm is None:
        fm = fundamental_matrix(X)
    n = X.n
    J = canonical_J(n)
    # Phi^-1 = -J Phi^T J for the whole stack; xi frame = its last n columns
    Phi_inv = -J @ np.swapaxes(fm.Phi, 1, 2) @ J
    frames = Phi_inv[:, :, n:]
    return AbstractSystem(X.a, X.b, frames, provenance=X.label or "system",
                          normalize_start=False)


def _chart_complement(F):
    """The standard transverse Lagrangian J xi used as chart complement."""
    return canonical_J(F.shape[0] // 2) @ F


def xi_derivative_form(S: AbstractSystem, t, complement=None) -> SymmetricForm:
    """xi'(t) as a symmetric form on xi(t), in the stored orthonormal basis.

    Chart coordinates of the neighboring frames in a chart centered at xi(t)
    are differentiated with a central stencil of the highest order the node
    position allows (6th in the deep interior, degrading to 2nd next to the
    endpoints, one-sided at the endpoints themselves); near conjugate
    instants the curve turns fast and the extra orders keep the truncation
    error below the curve's tolerance budget.  The result is independent of
    the chosen transverse ``complement`` up to discretization error.
    """
    k = S.node_index(t)
    h = S.step
    F = S.frames[k]
    F1 = _chart_complement(F) if complement is None else np.asarray(complement)

    def coord(j):
        if j == k:
            return np.zeros((S.n, S.n))
        return chart(F, F1, S.frames[j]).entries

    if 3 <= k <= S.grid_N - 3:
        D = (45.0 * (coord(k + 1) - coord(k - 1))
             - 9.0 * (coord(k + 2) - coord(k - 2))
             + (coord(k + 3) - coord(k - 3))) / (60.0 * h)
    elif 2 <= k <= S.grid_N - 2:
        D = (8.0 * (coord(k + 1) - coord(k - 1))
             - (coord(k + 2) - coord(k - 2))) / (12.0 * h)
    elif 0 < k < S.grid_N:
        D = (coord(k + 1) - coord(k - 1)) / (2 * h)
    elif k == 0:
        D = (-3 * coord(0) + 4 * coord(1) - coord(2)) / (2 * h)
    else:
        D = (3 * coord(k) - 4 * coord(k - 1) + coord(k - 2)) / (2 * h)
    return SymmetricForm(D)


def pushforward(S, M, frame_src, frame_dst) -> SymmetricForm:
    """The form S, living on the span of ``frame_src``, pushed through M.

    A linear symplectomorphism M sends a tangent vector of the Lagrangian
    Grassmannian at L (a symmetric form on L) to the same form read through
    M on M(L): (M_* S)(Mv, Mw) = S(v, w).  The result is expressed in the
    basis ``frame_dst`` of M(span frame_src), so it can be compared entry
    by entry with forms computed in that basis.
    """
    S = np.asarray(S, dtype=float)
    cols = np.asarray(M, dtype=float) @ np.asarray(frame_src, dtype=float)
    # frame_dst = cols @ Q (both span M(L)); least squares for conditioning
    Q, *_ = np.linalg.lstsq(cols, np.asarray(frame_dst, dtype=float),
                            rcond=None)
    return SymmetricForm(Q.T @ S @ Q)


def abstract_index(S: AbstractSystem, zero_tol=1e-9, stride=1):
    """(nondegenerate, index) with index = n_minus of -xi'(t), t-independent.

    Scans interior grid points (subsampled by ``stride``); the system is
    nondegenerate when xi' has no zero eigenvalue anywhere and its inertia
    is constant.  On failure the first offending grid time is recorded on
    the returned flag via the ``failure`` attribute of the result tuple.
    """
    ts = S.grid
    first = None
    for k in range(1, S.grid_N, stride):
        iner = inertia(xi_derivative_form(S, ts[k]), zero_tol)
        if iner[2] != 0:
            return False, 0
        if first is None:
            first = iner
        elif iner != first:
            return False, 0
    if first is None:
        return False, 0
    # index of -xi' = n_plus of xi'
    return True, first[0]


def abstract_instants(S: AbstractSystem, rank_tol=None):
    """Grid nodes in ]a, b] where xi(t) meets xi(a) = L0 nontrivially.

    A transversal crossing between nodes only drives the smallest singular
    value of the top block down to O(grid step) at the nearest node, so the
    default threshold scales with the step.  Local minima of the smallest
    singular value below the threshold are reported with their estimated
    intersection dimension; a coarse scan used for cross-checks against the
    determinant detector (accurate to about one grid step).
    """
    n = S.n
    if rank_tol is None:
        rank_tol = 5.0 * S.step
    tops = S.frames[:, :n, :]
    sv = np.linalg.svd(tops, compute_uv=False)
    smin = sv[:, -1]
    times, dims = [], []
    for k in range(1, S.grid_N + 1):
        if smin[k] >= rank_tol:
            continue
        left = smin[k - 1] if k > 0 else np.inf
        right = smin[k + 1] if k < S.grid_N else np.inf
        if smin[k] <= left and smin[k] <= right:
            times.append(S.grid[k])
            dims.append(int(np.sum(sv[k] < rank_tol)))
    return np.array(times), np.array(dims, dtype=int)


def realize_system(S: AbstractSystem, sp_tol=1e-3) -> SympDiffSystem:
    """A differential system whose solution curve induces the given xi.

    For each node, the orthonormal frame F of xi(t) is completed to the
    basis U = (JF | F), which is orthogonal and symplectic, so psi = U^T
    is symplectic and sends xi(t) to L0; Phi = psi(t) psi(a)^-1 is then
    symplectic with Phi(t)^-1(L0) = psi(a)(xi(t)), an isomorphic copy of
    the curve with the same conjugate data.  X = Phi' Phi^-1 by grid
    differences, projected onto sp(2n, R).
    """
    n = S.n
    J = canonical_J(n)
    F = S.frames                              # (N+1, 2n, n), aligned
    U = np.concatenate([J @ F, F], axis=2)    # orthogonal + symplectic
    psi = np.swapaxes(U, 1, 2)
    psi0_inv = np.linalg.inv(psi[0])
    Phi = psi @ psi0_inv

    dPhi = central_derivative(Phi, S.step, order=4)
    Phi_inv = -J @ np.swapaxes(Phi, 1, 2) @ J
    X = dPhi @ Phi_inv

    # pre-projection defect is O(h^2) from the stencil; a large value means
    # the frame curve itself is not resolved by the grid
    defect = np.max(np.abs(np.swapaxes(X, 1, 2) @ J + J @ X))
    scale = max(1.0, float(np.max(np.abs(X))))
    if defect > sp_tol * scale:
        raise FrameAlignmentError(
            f"realized coefficient leaves sp(2n) by {defect:.2e} "
            "(curve sampled too coarsely)")
    # project exactly onto the Lie algebra: JX must be symmetric
    JX = J @ X
    JX = 0.5 * (JX + np.swapaxes(JX, 1, 2))
    X = -J @ JX

    A = X[:, :n, :n]
    B = X[:, :n, n:]
    C = X[:, n:, :n]
    return SympDiffSystem.from_samples(n, S.a, S.b, A, B, C,
                                       label=(S.provenance or "abstract")
                                       + "/realized")
