"""Symplectic differential systems: integration, conjugate instants, reduction.

A system is a smooth curve X(t) = [[A, B], [C, -A^T]] in sp(2n, R) on [a, b].
The fundamental matrix Phi solves Phi' = X Phi, Phi(a) = Id and stays in the
symplectic group; an instant t in ]a, b] is conjugate when some nonzero
solution (v, alpha) has v(a) = v(t) = 0, equivalently when the upper n-by-n
block of Phi(t) restricted to the columns spanning {0} + R^n* drops rank.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

from . import kernels
from .numutil import central_derivative, uniform_grid
from .symform import SymmetricForm, inertia
from .symplectic import assemble_sp, canonical_J, symplectic_inverse

__all__ = [
    "SympDiffSystem",
    "MorseSturm",
    "IsoPair",
    "compose_iso",
    "identity_iso",
    "FundamentalMatrix",
    "ConjugateInstant",
    "ConjugateReport",
    "fundamental_matrix",
    "conjugate_instants",
    "crossing_data",
    "maslov_regular",
    "MaslovUnavailableError",
    "apply_isomorphism",
    "flatten_B",
    "to_morse_sturm",
]

DEFAULT_GRID_N = 4096
DEFAULT_ZERO_TOL = 1e-7
DEFAULT_RANK_TOL = 1e-8
DEFAULT_T_TOL = 1e-8
MULT_RANK_TOL = 1e-6
CANDIDATE_TOL = 0.05

# Crossing-form convention, fixed once: the crossing form at a conjugate
# instant is the derivative form xi'(t) (the push-forward of -B(t) through
# Phi(t)^-1) restricted to xi(t) vs xi(a).  Calibration: the harmonic
# oscillator (n=1, g=1, R=-1) has signature -1 at its crossing t = pi.
SIGNATURE_CONVENTION = ("crossing form = xi'(t) restricted to xi(t)/\\xi(a); "
                        "harmonic oscillator crossing has signature -1")


class MaslovUnavailableError(RuntimeError):
    """Raised when only the regular-crossing Maslov count is implemented."""


def central_derivative_of(f, t, h):
    """4th-order central difference of a matrix curve at one point."""
    return (np.asarray(f(t - 2 * h), dtype=float)
            - 8.0 * np.asarray(f(t - h), dtype=float)
            + 8.0 * np.asarray(f(t + h), dtype=float)
            - np.asarray(f(t + 2 * h), dtype=float)) / (12.0 * h)


# ---------------------------------------------------------------------------
# coefficient curves


class _AnalyticCoeff:
    kind = "analytic"

    def __init__(self, func):
        self._func = func

    def eval(self, t):
        A, B, C = self._func(t)
        return (np.asarray(A, dtype=float), np.asarray(B, dtype=float),
                np.asarray(C, dtype=float))

    def eval_batch(self, ts):
        out = [self.eval(t) for t in ts]
        return (np.array([o[0] for o in out]), np.array([o[1] for o in out]),
                np.array([o[2] for o in out]))


class _SampledCoeff:
    """Grid samples of (A, B, C) with cubic interpolation in between."""

    kind = "sampled"

    def __init__(self, ts, A, B, C):
        self.ts = np.asarray(ts, dtype=float)
        self.A_samples = np.asarray(A, dtype=float)
        self.B_samples = 0.5 * (np.asarray(B, dtype=float)
                                + np.swapaxes(np.asarray(B, dtype=float), 1, 2))
        self.C_samples = 0.5 * (np.asarray(C, dtype=float)
                                + np.swapaxes(np.asarray(C, dtype=float), 1, 2))
        self._spl_A = CubicSpline(self.ts, self.A_samples, axis=0)
        self._spl_B = CubicSpline(self.ts, self.B_samples, axis=0)
        self._spl_C = CubicSpline(self.ts, self.C_samples, axis=0)

    def eval(self, t):
        return self._spl_A(t), self._spl_B(t), self._spl_C(t)

    def eval_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        return self._spl_A(ts), self._spl_B(ts), self._spl_C(ts)


class _MorseSturmCoeff:
    """Coefficient curve (0, g^-1, g R(t)) with batch-aware R evaluation."""

    kind = "morse-sturm"

    def __init__(self, g, g_inv, Rcurve):
        self.g = g
        self.g_inv = g_inv
        self.Rcurve = Rcurve

    def eval(self, t):
        n = self.g.shape[0]
        R = np.asarray(self.Rcurve(t), dtype=float)
        return np.zeros((n, n)), self.g_inv, self.g @ R

    def eval_batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        n = self.g.shape[0]
        try:
            R = np.asarray(self.Rcurve(ts), dtype=float)
            if R.shape != (ts.size, n, n):
                raise ValueError
        except Exception:
            R = np.array([np.asarray(self.Rcurve(t), dtype=float)
                          for t in ts])
        A = np.zeros((ts.size, n, n))
        B = np.broadcast_to(self.g_inv, A.shape).copy()
        return A, B, self.g @ R


# ---------------------------------------------------------------------------
# systems


class SympDiffSystem:
    """Time-dependent coefficient curve X(t) in sp(2n, R) on [a, b]."""

    def __init__(self, n, a, b, coeff, grid_N=DEFAULT_GRID_N, label=""):
        if not b > a:
            raise ValueError("need a < b")
        self.n = int(n)
        self.a = float(a)
        self.b = float(b)
        self.grid_N = int(grid_N)
        self.coeff = coeff
        self.label = label
        self._half_cache = None

    @classmethod
    def from_callable(cls, n, a, b, func, grid_N=DEFAULT_GRID_N, label=""):
        """Build from ``func(t) -> (A, B, C)``."""
        return cls(n, a, b, _AnalyticCoeff(func), grid_N=grid_N, label=label)

    @classmethod
    def from_samples(cls, n, a, b, A_samples, B_samples, C_samples, label=""):
        """Build from per-grid-node block samples (N+1 of each)."""
        A_samples = np.asarray(A_samples, dtype=float)
        grid_N = A_samples.shape[0] - 1
        ts = uniform_grid(a, b, grid_N)
        coeff = _SampledCoeff(ts, A_samples, B_samples, C_samples)
        return cls(n, a, b, coeff, grid_N=grid_N, label=label)

    @property
    def source(self):
        return self.coeff.kind

    @property
    def grid(self):
        return uniform_grid(self.a, self.b, self.grid_N)

    @property
    def step(self):
        return (self.b - self.a) / self.grid_N

    def blocks_at(self, t):
        A, B, C = self.coeff.eval(t)
        return A, 0.5 * (B + B.T), 0.5 * (C + C.T)

    def X_at(self, t):
        return assemble_sp(*self.blocks_at(t))

    def half_grid_X(self):
        """X sampled at half-step resolution, shape (2N+1, 2n, 2n)."""
        if self._half_cache is None:
            th = uniform_grid(self.a, self.b, 2 * self.grid_N)
            A, B, C = self.coeff.eval_batch(th)
            B = 0.5 * (B + np.swapaxes(B, 1, 2))
            C = 0.5 * (C + np.swapaxes(C, 1, 2))
            n = self.n
            X = np.zeros((th.size, 2 * n, 2 * n))
            X[:, :n, :n] = A
            X[:, :n, n:] = B
            X[:, n:, :n] = C
            X[:, n:, n:] = -np.swapaxes(A, 1, 2)
            self._half_cache = X
        return self._half_cache

    def grid_blocks(self):
        """(A, B, C) stacked on the main grid (N+1 samples each)."""
        X = self.half_grid_X()[::2]
        n = self.n
        return X[:, :n, :n], X[:, :n, n:], X[:, n:, :n]

    def B_inertia_profile(self, zero_tol=1e-9):
        _, B, _ = self.grid_blocks()
        return [inertia(Bk, zero_tol) for Bk in B]

    def is_nondegenerate(self, zero_tol=1e-9):
        """True when B(t) is invertible with constant inertia on the grid."""
        profile = self.B_inertia_profile(zero_tol)
        first = profile[0]
        return first[2] == 0 and all(p == first for p in profile)

    def index(self, zero_tol=1e-9):
        """Index of the system = index of B(t) (nondegenerate systems only)."""
        if not self.is_nondegenerate(zero_tol):
            raise ValueError("index is defined for nondegenerate systems only")
        return self.B_inertia_profile(zero_tol)[0][1]

    def resampled(self, grid_N):
        return SympDiffSystem(self.n, self.a, self.b, self.coeff,
                              grid_N=grid_N, label=self.label)


@dataclass
class MorseSturm:
    """Second-order system v'' = R(t) v with R symmetric w.r.t. constant g.

    As a symplectic differential system: A = 0, B = g^-1, C(t) = g R(t).
    """

    g: np.ndarray
    Rcurve: object                 # callable t -> (n, n) matrix
    a: float
    b: float
    grid_N: int = DEFAULT_GRID_N
    label: str = ""
    G_SYM_TOL = 1e-9

    def __post_init__(self):
        self.g = 0.5 * (np.asarray(self.g, dtype=float)
                        + np.asarray(self.g, dtype=float).T)
        if inertia(self.g)[2]:
            raise ValueError("g must be nondegenerate")
        self._g_inv = np.linalg.inv(self.g)
        self._system = None

    @property
    def n(self):
        return self.g.shape[0]

    def R_at(self, t):
        return np.asarray(self.Rcurve(t), dtype=float)

    def g_symmetry_defect(self):
        ts = uniform_grid(self.a, self.b, self.grid_N)
        worst = 0.0
        for t in ts:
            gR = self.g @ self.R_at(t)
            worst = max(worst, float(np.max(np.abs(gR - gR.T))))
        return worst

    @property
    def system(self) -> SympDiffSystem:
        if self._system is None:
            coeff = _MorseSturmCoeff(self.g, self._g_inv, self.Rcurve)
            self._system = SympDiffSystem(
                self.n, self.a, self.b, coeff, grid_N=self.grid_N,
                label=self.label or "morse-sturm")
        return self._system

    def index(self):
        return inertia(self.g)[1]


# ---------------------------------------------------------------------------
# fundamental matrix


class FundamentalMatrix:
    """Phi on the grid plus dense re-integration between nodes."""

    def __init__(self, system, Phi, max_drift, backend):
        self.system = system
        self.ts = system.grid
        self.Phi = Phi
        self.max_drift = max_drift
        self.backend = backend

    def at(self, t, substeps=2):
        """Phi(t) for arbitrary t in [a, b], re-integrated from the nearest node."""
        sysm = self.system
        t = float(t)
        k = int(round((t - sysm.a) / sysm.step))
        k = min(max(k, 0), sysm.grid_N)
        t0 = self.ts[k]
        M = self.Phi[k]
        if t == t0:
            return M
        return _rk4_dense(sysm.X_at, t0, M, t, substeps)

    def d_values(self):
        """det of the upper n-by-n block of Phi(t) [0; Id] at every node."""
        n = self.system.n
        return np.linalg.det(self.Phi[:, :n, n:])

    def d_at(self, t):
        n = self.system.n
        return float(np.linalg.det(self.at(t)[:n, n:]))

    def drift_profile(self):
        J = canonical_J(self.system.n)
        E = np.swapaxes(self.Phi, 1, 2) @ J @ self.Phi - J
        return np.linalg.norm(E, ord=2, axis=(1, 2))


def _rk4_dense(X_at, t0, M0, t1, n_steps):
    h = (t1 - t0) / n_steps
    M = M0
    for k in range(n_steps):
        t = t0 + k * h
        X1 = X_at(t)
        X2 = X_at(t + 0.5 * h)
        X4 = X_at(t + h)
        k1 = X1 @ M
        k2 = X2 @ (M + 0.5 * h * k1)
        k3 = X2 @ (M + 0.5 * h * k2)
        k4 = X4 @ (M + h * k3)
        M = M + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return M


def _assemble_sp_batch(A, B, C):
    """Stack sp(2n) matrices from (m, n, n) block arrays, symmetrizing B, C."""
    B = 0.5 * (B + np.swapaxes(B, 1, 2))
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    n = A.shape[1]
    X = np.zeros((A.shape[0], 2 * n, 2 * n))
    X[:, :n, :n] = A
    X[:, :n, n:] = B
    X[:, n:, :n] = C
    X[:, n:, n:] = -np.swapaxes(A, 1, 2)
    return X


def fundamental_matrix(X: SympDiffSystem, backend=None,
                       trigger=kernels.REPROJECT_TRIGGER,
                       ceiling=kernels.DRIFT_CEILING,
                       refine=1) -> FundamentalMatrix:
    """Integrate Phi' = X Phi on the grid with symplectic reprojection.

    ``refine`` subdivides every grid step for the integration (the stored
    Phi stays on the system grid); useful when the coefficients carry
    features near the grid scale.
    """
    J = canonical_J(X.n)
    refine = int(refine)
    if refine == 1:
        Xs, h = X.half_grid_X(), X.step
    else:
        th = uniform_grid(X.a, X.b, 2 * X.grid_N * refine)
        A, B, C = X.coeff.eval_batch(th)
        Xs, h = _assemble_sp_batch(A, B, C), X.step / refine
    Phi, max_drift = kernels.propagate(Xs, h, J=J,
                                       trigger=trigger, ceiling=ceiling,
                                       backend=backend)
    if refine > 1:
        Phi = Phi[::refine]
    return FundamentalMatrix(X, Phi, max_drift,
                             backend or kernels.BACKEND)


# ---------------------------------------------------------------------------
# conjugate-instant detection


@dataclass(frozen=True)
class ConjugateInstant:
    t: float
    multiplicity: int
    signature: object            # int, or "unavailable" when not computed
    kind: str = "sign-change"    # or "tangential"


@dataclass
class ConjugateReport:
    instants: list
    clusters: list
    ts: np.ndarray
    d_trace: np.ndarray
    metadata: dict = field(default_factory=dict)

    def instant_times(self):
        return [inst.t for inst in self.instants]

    def flagged_nodes(self, margin_steps=0):
        """Boolean mask of grid nodes covered by the detected conjugate set."""
        h = self.ts[1] - self.ts[0]
        mask = np.zeros(self.ts.size, dtype=bool)
        for inst in self.instants:
            mask |= np.abs(self.ts - inst.t) <= (margin_steps + 0.5) * h
        for lo, hi in self.clusters:
            mask |= (self.ts >= lo - margin_steps * h) & \
                    (self.ts <= hi + margin_steps * h)
        return mask


def _runs(mask):
    runs = []
    k = 0
    while k < mask.size:
        if mask[k]:
            j = k
            while j + 1 < mask.size and mask[j + 1]:
                j += 1
            runs.append((k, j))
            k = j + 1
        else:
            k += 1
    return runs


def conjugate_instants(X: SympDiffSystem, zero_tol=DEFAULT_ZERO_TOL,
                       rank_tol=DEFAULT_RANK_TOL, t_tol=DEFAULT_T_TOL,
                       eps_a=None, cluster_width=None,
                       candidate_tol=CANDIDATE_TOL, fm=None,
                       with_signatures=True, backend=None) -> ConjugateReport:
    """Scan ]a + eps_a, b] for conjugate instants of X.

    The scalar d(t) (determinant of the upper block of Phi(t) restricted to
    the {0} + R^n* columns) is normalized by its grid maximum; nodes with
    |d| < zero_tol form candidate regions.  Wide regions are reported as
    clusters, narrow ones and sign changes are refined to isolated instants
    (bisection for sign changes, bounded minimization for tangential zeros).
    """
    if fm is None:
        fm = fundamental_matrix(X, backend=backend)
    ts = fm.ts
    h = X.step
    n = X.n
    if eps_a is None:
        eps_a = 5.0 * (X.b - X.a) / X.grid_N
    if cluster_width is None:
        cluster_width = 4.0 * h

    d = fm.d_values()
    dmax = float(np.max(np.abs(d)))
    meta = {
        "eps_a": eps_a,
        "zero_tol": zero_tol,
        "d_normalization": dmax,
        "cluster_width": cluster_width,
        "signature_convention": SIGNATURE_CONVENTION,
        "backend": fm.backend,
        "max_drift": fm.max_drift,
    }
    if dmax == 0.0:
        # identically degenerate scan; the entire window is one cluster
        return ConjugateReport([], [(X.a + eps_a, X.b)], ts, d, meta)

    dh = d / dmax
    start = int(np.searchsorted(ts, X.a + eps_a, side="right"))
    active = np.zeros(ts.size, dtype=bool)
    active[start:] = True
    # the zero threshold is measured against the running envelope of |d|:
    # every system has the trivial zero d(a) = 0 with d ~ (t - a)^n right
    # after it, so a threshold relative to the global maximum alone would
    # flag a whole startup region as conjugate
    env = np.maximum(np.maximum.accumulate(np.abs(dh)), 1e-300)
    low = (np.abs(dh) < zero_tol * env) & active

    clusters = []
    instant_times = []
    kinds = []

    def refine_sign_change(lo, hi):
        return brentq(fm.d_at, lo, hi, xtol=max(t_tol, 1e-13))

    def refine_touch(lo, hi):
        res = minimize_scalar(lambda t: abs(fm.d_at(t)), bounds=(lo, hi),
                              method="bounded",
                              options={"xatol": max(t_tol * 1e-2, 1e-13)})
        return float(res.x), float(res.fun)

    for k0, k1 in _runs(low):
        width = ts[k1] - ts[k0]
        if width >= cluster_width:
            clusters.append((float(ts[k0]), float(ts[k1])))
            continue
        lo = ts[max(k0 - 1, 0)]
        hi = ts[min(k1 + 1, ts.size - 1)]
        dlo = dh[max(k0 - 1, 0)]
        dhi = dh[min(k1 + 1, ts.size - 1)]
        if dlo * dhi < 0:
            instant_times.append(refine_sign_change(lo, hi))
            kinds.append("sign-change")
        else:
            t_star, val = refine_touch(lo, hi)
            if val < zero_tol * env[min(k1 + 1, ts.size - 1)] * dmax:
                instant_times.append(t_star)
                kinds.append("tangential")

    # sign changes between nodes that never dip under zero_tol
    sgn = np.sign(dh)
    for k in range(max(start, 1), ts.size - 1):
        if low[k] or low[k + 1]:
            continue
        if sgn[k] * sgn[k + 1] < 0:
            instant_times.append(refine_sign_change(ts[k], ts[k + 1]))
            kinds.append("sign-change")

    # tangential zeros too narrow for the grid: local minima of |d| that dip
    # below the candidate threshold without touching zero_tol at any node
    absdh = np.abs(dh)
    for k in range(max(start, 1), ts.size - 1):
        if low[k - 1] or low[k] or low[k + 1]:
            continue
        if sgn[k - 1] * sgn[k] < 0 or sgn[k] * sgn[k + 1] < 0:
            continue
        if absdh[k] < candidate_tol and absdh[k] <= absdh[k - 1] \
                and absdh[k] < absdh[k + 1]:
            t_star, val = refine_touch(ts[k - 1], ts[k + 1])
            if val < zero_tol * env[k] * dmax:
                instant_times.append(t_star)
                kinds.append("tangential")

    # dedupe and drop anything swallowed by a cluster
    order = np.argsort(instant_times)
    final_times, final_kinds = [], []
    for idx in order:
        t_star, kind = instant_times[idx], kinds[idx]
        if t_star <= X.a + eps_a or t_star > X.b + h / 2:
            continue
        if any(lo - h <= t_star <= hi + h for lo, hi in clusters):
            continue
        if final_times and abs(t_star - final_times[-1]) <= max(t_tol, h / 4):
            continue
        final_times.append(min(t_star, X.b))
        final_kinds.append(kind)

    instants = []
    for t_star, kind in zip(final_times, final_kinds):
        mult, sig, _ = _crossing(X, t_star, fm, rank_tol=rank_tol)
        if not with_signatures:
            sig = "unavailable"
        instants.append(ConjugateInstant(t_star, max(mult, 1), sig, kind))

    return ConjugateReport(instants, clusters, ts, d, meta)


def _crossing(X: SympDiffSystem, t, fm: FundamentalMatrix,
              rank_tol=DEFAULT_RANK_TOL, reg_tol=1e-4):
    """(multiplicity, signature, regular) of the crossing at t.

    Multiplicity is dim(xi(t) /\\ xi(a)); the crossing form is xi'(t), the
    push-forward of -B(t) by Phi(t)^-1, restricted to that intersection.
    Signature uses a relative zero band of width ``reg_tol``; a crossing is
    regular when the restricted form has no eigenvalue inside the band.
    """
    n = X.n
    Phi_t = fm.at(t)
    F = symplectic_inverse(Phi_t)[:, n:]          # frame of xi(t)
    F = F / np.linalg.norm(F, axis=0, keepdims=True)
    # intersection with L0 = nullspace of the top block
    U, sv, Vt = np.linalg.svd(F[:n])
    # columns of F are unit vectors, so the block scale is O(1) and an
    # absolute singular-value threshold is the right rank test
    null_mask = sv < MULT_RANK_TOL
    mult = int(np.sum(null_mask))
    if mult == 0:
        return 0, 0, True
    W = F @ Vt[null_mask].T
    # normalize intersection vectors
    W = W / np.linalg.norm(W, axis=0, keepdims=True)
    _, B, _ = X.blocks_at(t)
    PW = Phi_t @ W
    S = -(PW[n:].T @ B @ PW[n:])
    S = 0.5 * (S + S.T)
    scale = max(np.max(np.abs(B)), 1e-300)
    w = np.linalg.eigvalsh(S / scale)
    band = reg_tol
    n_plus = int(np.sum(w > band))
    n_minus = int(np.sum(w < -band))
    signature = n_plus - n_minus
    regular = (n_plus + n_minus) == mult
    return mult, signature, regular


def crossing_data(X: SympDiffSystem, t, fm=None,
                  rank_tol=DEFAULT_RANK_TOL) -> tuple[int, int]:
    """Multiplicity and signature of the conjugate instant t (errors if none)."""
    if not (X.a < t <= X.b + 1e-12):
        raise ValueError("t outside ]a, b]")
    if fm is None:
        fm = fundamental_matrix(X)
    mult, sig, _ = _crossing(X, t, fm, rank_tol=rank_tol)
    if mult == 0:
        raise ValueError(f"t = {t} is not a conjugate instant")
    return mult, sig


def maslov_regular(X: SympDiffSystem, report: ConjugateReport = None,
                   fm=None) -> int:
    """Sum of crossing signatures over ]a, b]; regular crossings only."""
    if fm is None:
        fm = fundamental_matrix(X)
    if report is None:
        report = conjugate_instants(X, fm=fm)
    if report.clusters:
        raise MaslovUnavailableError(
            "unavailable: clustered conjugate instants (non-regular crossing)")
    total = 0
    for inst in report.instants:
        mult, sig, regular = _crossing(X, inst.t, fm)
        if not regular:
            raise MaslovUnavailableError(
                f"unavailable: degenerate crossing form at t = {inst.t:.6g}")
        total += sig
    return total


# ---------------------------------------------------------------------------
# isomorphisms and Morse-Sturm reduction


@dataclass
class IsoPair:
    """An isomorphism curve phi(t) = [[Z, 0], [Z^-T W, Z^-T]] preserving L0."""

    Z: object                     # callable t -> invertible (n, n)
    W: object                     # callable t -> symmetric (n, n)
    dZ: object = None             # optional analytic derivatives
    dW: object = None
    fd_step: float = 1e-5

    def Z_at(self, t):
        return np.asarray(self.Z(t), dtype=float)

    def W_at(self, t):
        Wm = np.asarray(self.W(t), dtype=float)
        return 0.5 * (Wm + Wm.T)

    def dZ_at(self, t):
        if self.dZ is not None:
            return np.asarray(self.dZ(t), dtype=float)
        return central_derivative_of(self.Z_at, t, self.fd_step)

    def dW_at(self, t):
        if self.dW is not None:
            Wm = np.asarray(self.dW(t), dtype=float)
        else:
            Wm = central_derivative_of(self.W_at, t, self.fd_step)
        return 0.5 * (Wm + Wm.T)

    def phi_at(self, t):
        Z = self.Z_at(t)
        W = self.W_at(t)
        ZinvT = np.linalg.inv(Z).T
        n = Z.shape[0]
        phi = np.zeros((2 * n, 2 * n))
        phi[:n, :n] = Z
        phi[n:, :n] = ZinvT @ W
        phi[n:, n:] = ZinvT
        return phi


def identity_iso(n: int) -> IsoPair:
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return IsoPair(Z=lambda t: eye, W=lambda t: zero,
                   dZ=lambda t: zero, dW=lambda t: zero)


def compose_iso(second: IsoPair, first: IsoPair) -> IsoPair:
    """The composite phi_2(t) phi_1(t) as an IsoPair (second after first)."""

    def Z(t):
        return second.Z_at(t) @ first.Z_at(t)

    def W(t):
        Z1 = first.Z_at(t)
        return Z1.T @ second.W_at(t) @ Z1 + first.W_at(t)

    def dZ(t):
        return (second.dZ_at(t) @ first.Z_at(t)
                + second.Z_at(t) @ first.dZ_at(t))

    def dW(t):
        Z1 = first.Z_at(t)
        dZ1 = first.dZ_at(t)
        W2 = second.W_at(t)
        return (dZ1.T @ W2 @ Z1 + Z1.T @ second.dW_at(t) @ Z1
                + Z1.T @ W2 @ dZ1 + first.dW_at(t))

    return IsoPair(Z=Z, W=W, dZ=dZ, dW=dW)


def apply_isomorphism(X: SympDiffSystem, iso: IsoPair) -> SympDiffSystem:
    """Transport X through phi = [[Z, 0], [Z^-T W, Z^-T]].

    Blocks of the transported system:
        A~ = Z A Z^-1 - Z B W Z^-1 + Z' Z^-1
        B~ = Z B Z^T
        C~ = Z^-T (W A + C - W B W + A^T W + W') Z^-1
    """
    def coeff(t):
        A, B, C = X.blocks_at(t)
        Z = iso.Z_at(t)
        W = iso.W_at(t)
        Zinv = np.linalg.inv(Z)
        At = (Z @ A - Z @ B @ W + iso.dZ_at(t)) @ Zinv
        Bt = Z @ B @ Z.T
        inner = W @ A + C - W @ B @ W + A.T @ W + iso.dW_at(t)
        Ct = Zinv.T @ inner @ Zinv
        return At, Bt, Ct

    return SympDiffSystem.from_callable(X.n, X.a, X.b, coeff,
                                        grid_N=X.grid_N,
                                        label=X.label + "~" if X.label else "")


def _sampled_iso(ts, Z, W, dZ, dW):
    """IsoPair whose factors interpolate precomputed grid samples."""
    return IsoPair(Z=CubicSpline(ts, Z, axis=0),
                   W=CubicSpline(ts, W, axis=0),
                   dZ=CubicSpline(ts, dZ, axis=0),
                   dW=CubicSpline(ts, dW, axis=0))


class _NoClosedForm(Exception):
    """Internal: no closed-form congruence chain for this block size."""


def _coeff_splines(X, th):
    """Cubic-spline views of (A, B, C) usable with derivative orders.

    Sampled systems already are cubic interpolants, so their splines are
    reused verbatim (evaluation anywhere is exact with respect to the
    system's own semantics); analytic systems get splines through the
    working samples.
    """
    c = X.coeff
    if isinstance(c, _SampledCoeff):
        return c._spl_A, c._spl_B, c._spl_C
    A, B, C = c.eval_batch(th)
    B = 0.5 * (B + np.swapaxes(B, 1, 2))
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    return (CubicSpline(th, A, axis=0), CubicSpline(th, B, axis=0),
            CubicSpline(th, C, axis=0))


def _sqrt_chain(m, dm, d2m):
    """(r, r', r'') for r = sqrt(m) given a positive scalar curve m."""
    r = np.sqrt(m)
    dr = dm / (2.0 * r)
    d2r = (d2m - 2.0 * dr ** 2) / (2.0 * r)
    return r, dr, d2r


def _congruence_chain(B, dB, d2B):
    """Closed-form T(t) with B = T E T^T, E constant, plus T', T''.

    Implemented for n = 1 and n = 2 (Cholesky chain in the definite case,
    eigen chain with unwrapped rotation angle in the indefinite case); the
    derivative chains come from implicit differentiation, so T', T'' are
    exact functions of B, B', B''.  Raises _NoClosedForm otherwise.
    """
    n = B.shape[1]
    m = B.shape[0]
    if n == 1:
        sgn = 1.0 if B[0, 0, 0] > 0 else -1.0
        b = sgn * B[:, 0, 0]
        if np.any(b <= 0):
            raise _NoClosedForm("sign change in 1x1 block")
        r, dr, d2r = _sqrt_chain(b, sgn * dB[:, 0, 0], sgn * d2B[:, 0, 0])
        shape = (m, 1, 1)
        return (r.reshape(shape), dr.reshape(shape), d2r.reshape(shape),
                np.array([[sgn]]))
    if n != 2:
        raise _NoClosedForm(f"no closed form for n = {n}")

    w = np.linalg.eigvalsh(B[0])
    if w[0] > 0 or w[1] < 0:
        # definite: B = sgn L L^T with L lower-triangular (Cholesky chain)
        sgn = 1.0 if w[0] > 0 else -1.0
        M, dM, d2M = sgn * B, sgn * dB, sgn * d2B
        m11, m21, m22 = M[:, 0, 0], M[:, 1, 0], M[:, 1, 1]
        if np.any(m11 <= 0):
            raise _NoClosedForm("pivot loss in Cholesky chain")
        l11, dl11, d2l11 = _sqrt_chain(m11, dM[:, 0, 0], d2M[:, 0, 0])
        l21 = m21 / l11
        dl21 = (dM[:, 1, 0] - l21 * dl11) / l11
        d2l21 = (d2M[:, 1, 0] - 2.0 * dl21 * dl11 - l21 * d2l11) / l11
        d = m22 - l21 ** 2
        if np.any(d <= 0):
            raise _NoClosedForm("pivot loss in Cholesky chain")
        l22, dl22, d2l22 = _sqrt_chain(
            d, dM[:, 1, 1] - 2.0 * l21 * dl21,
            d2M[:, 1, 1] - 2.0 * dl21 ** 2 - 2.0 * l21 * d2l21)
        T = np.zeros((m, 2, 2))
        dT = np.zeros((m, 2, 2))
        d2T = np.zeros((m, 2, 2))
        T[:, 0, 0], T[:, 1, 0], T[:, 1, 1] = l11, l21, l22
        dT[:, 0, 0], dT[:, 1, 0], dT[:, 1, 1] = dl11, dl21, dl22
        d2T[:, 0, 0], d2T[:, 1, 0], d2T[:, 1, 1] = d2l11, d2l21, d2l22
        return T, dT, d2T, sgn * np.eye(2)

    # indefinite (inertia (1, 1)): eigen chain B = R(theta) diag(lp, lm) R^T
    # with lp > 0 > lm, so the eigenvalue gap s never closes and theta,
    # unwrapped along the grid, is as smooth as B itself
    b11, b12, b22 = B[:, 0, 0], B[:, 0, 1], B[:, 1, 1]
    db11, db12, db22 = dB[:, 0, 0], dB[:, 0, 1], dB[:, 1, 1]
    d2b11, d2b12, d2b22 = d2B[:, 0, 0], d2B[:, 0, 1], d2B[:, 1, 1]
    tr, dtr, d2tr = b11 + b22, db11 + db22, d2b11 + d2b22
    de, dde, d2de = b11 - b22, db11 - db22, d2b11 - d2b22
    s = np.sqrt(de ** 2 + 4.0 * b12 ** 2)
    if np.any(s <= 0):
        raise _NoClosedForm("eigenvalue gap closes")
    ds = (de * dde + 4.0 * b12 * db12) / s
    d2s = (dde ** 2 + de * d2de + 4.0 * db12 ** 2 + 4.0 * b12 * d2b12
           - ds ** 2) / s
    theta = 0.5 * np.unwrap(np.arctan2(2.0 * b12, de))
    dth = (db12 * de - b12 * dde) / s ** 2
    d2th = (d2b12 * de - b12 * d2de) / s ** 2 - 2.0 * dth * ds / s
    lp, dlp, d2lp = (tr + s) / 2, (dtr + ds) / 2, (d2tr + d2s) / 2
    nu, dnu, d2nu = (s - tr) / 2, (ds - dtr) / 2, (d2s - d2tr) / 2
    if np.any(lp <= 0) or np.any(nu <= 0):
        raise _NoClosedForm("inertia not constant along the curve")
    mp, dmp, d2mp = _sqrt_chain(lp, dlp, d2lp)
    mm, dmm, d2mm = _sqrt_chain(nu, dnu, d2nu)

    co, si = np.cos(theta), np.sin(theta)
    R = np.zeros((m, 2, 2))
    R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1] = co, -si, si, co
    K = np.array([[0.0, -1.0], [1.0, 0.0]])
    KR = K @ R
    dth3 = dth[:, None, None]
    dR = dth3 * KR
    d2R = d2th[:, None, None] * KR - (dth ** 2)[:, None, None] * R

    D = np.zeros((m, 2, 2))
    dD = np.zeros((m, 2, 2))
    d2D = np.zeros((m, 2, 2))
    D[:, 0, 0], D[:, 1, 1] = mp, mm
    dD[:, 0, 0], dD[:, 1, 1] = dmp, dmm
    d2D[:, 0, 0], d2D[:, 1, 1] = d2mp, d2mm

    T = R @ D
    dT = dR @ D + R @ dD
    d2T = d2R @ D + 2.0 * dR @ dD + R @ d2D
    return T, dT, d2T, np.diag([1.0, -1.0])


def _z_chain(T, dT, d2T, T0=None):
    """Z = T0 T^-1 with its first two derivatives (T0 defaults to T[0])."""
    if T0 is None:
        T0 = T[0]
    Tinv = np.linalg.inv(T)
    P = Tinv @ dT @ Tinv                          # -d(T^-1)
    Z = T0 @ Tinv
    dZ = -T0 @ P
    d2Z = T0 @ (2.0 * P @ dT @ Tinv - Tinv @ d2T @ Tinv)
    return Z, dZ, d2Z


def _sym_stack(M):
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def _stage_one_at(splines, ts, const_B, T0=None):
    """Stage-one blocks (A1, dA1, C1, B, Z, dZ, d2Z, T0) at arbitrary times.

    Uses the closed-form congruence chain, so every returned quantity is an
    exact function of the coefficient interpolants at ``ts``.  ``T0``
    anchors the congruence at t = a; when None it is taken from the first
    sample.  Raises _NoClosedForm when no chain exists for this block size.
    """
    A, dA = splines[0](ts), splines[0](ts, 1)
    B, C = _sym_stack(splines[1](ts)), _sym_stack(splines[2](ts))
    n = A.shape[1]
    if const_B:
        eye = np.broadcast_to(np.eye(n), A.shape).copy()
        zeros = np.zeros_like(A)
        return A, dA, C, B, eye, zeros, zeros, np.eye(n)
    dB, d2B = _sym_stack(splines[1](ts, 1)), _sym_stack(splines[1](ts, 2))
    T, dT, d2T, _ = _congruence_chain(B, dB, d2B)
    if T0 is None:
        T0 = T[0]
    Z, dZ, d2Z = _z_chain(T, dT, d2T, T0)
    Zinv = np.linalg.inv(Z)
    A1 = (Z @ A + dZ) @ Zinv
    dA1 = (dZ @ A + Z @ dA + d2Z) @ Zinv - A1 @ (dZ @ Zinv)
    C1 = np.swapaxes(Zinv, 1, 2) @ C @ Zinv
    return A1, dA1, C1, B, Z, dZ, d2Z, T0


def _is_const_B(splB, th):
    B = _sym_stack(splB(th))
    return float(np.max(np.abs(B - B[0]))) <= \
        1e-13 * max(1.0, float(np.max(np.abs(B))))


def _flatten_stage(X, refine):
    """Stage-one congruence data on the working half-grid.

    Returns (th, hw, A1, dA1, C1, Ba, Z, dZ, defect, anchor): the
    B-flattened blocks A1, C1 with the analytic derivative of A1, all
    sampled on th = half-grid of the (refined) working grid, the frozen
    block Ba, the congruence curve Z with its derivative, the worst
    transport defect ||Z B Z^T - Ba|| over the samples, and the
    congruence anchor T(a) (None when the closed-form chain is
    unavailable and the flow fallback was used).
    """
    n = X.n
    Nw = X.grid_N * int(refine)
    hw = (X.b - X.a) / Nw
    th = uniform_grid(X.a, X.b, 2 * Nw)
    splines = _coeff_splines(X, th)
    const_B = _is_const_B(splines[1], th)
    anchor = None
    try:
        A1, dA1, C1, B, Z, dZ, d2Z, anchor = _stage_one_at(
            splines, th, const_B)
        if const_B:
            return th, hw, A1, dA1, C1, B[0].copy(), Z, dZ, 0.0, anchor
    except _NoClosedForm:
        # generic flow fallback: Z' = -1/2 Z B' B^-1 integrated at half the
        # working step, with Z'' from a 4th-order stencil on Z'
        A, dA = splines[0](th), splines[0](th, 1)
        B, C = _sym_stack(splines[1](th)), _sym_stack(splines[2](th))
        tq = uniform_grid(X.a, X.b, 4 * Nw)
        Bq = _sym_stack(splines[1](tq))
        dBq = _sym_stack(splines[1](tq, 1))
        Gq = -0.5 * dBq @ np.linalg.inv(Bq)
        MT, _ = kernels.propagate(np.swapaxes(Gq, 1, 2), hw / 2.0, J=None)
        Z = np.swapaxes(MT, 1, 2)
        dZ = Z @ Gq[::2]
        d2Z = central_derivative(dZ, hw / 2.0, order=4)
        Zinv = np.linalg.inv(Z)
        A1 = (Z @ A + dZ) @ Zinv
        dA1 = (dZ @ A + Z @ dA + d2Z) @ Zinv - A1 @ (dZ @ Zinv)
        C1 = np.swapaxes(Zinv, 1, 2) @ C @ Zinv

    Ba = B[0].copy()
    defect = float(np.max(np.abs(Z @ B @ np.swapaxes(Z, 1, 2) - Ba)))
    return th, hw, A1, dA1, C1, Ba, Z, dZ, defect, anchor


class _ReducedCurve:
    """Transported curvature R(t) of a reduced system, exact at every t.

    Grid-sampled curvature splines alias badly where the transported
    coefficients carry narrow features, so instead of interpolating R this
    evaluates the whole reduction chain (congruence with analytic
    derivatives, then the A-removing gauge) at the query times.  The only
    interpolated ingredient is the gauge flow Z2, which solves a linear
    ODE and is therefore smooth enough for its spline to be faithful.
    """

    def __init__(self, splines, const_B, anchor, Ba, Z2_spline):
        self._splines = splines
        self._const_B = const_B
        self._anchor = anchor
        self._Ba = Ba
        self._B_inv = np.linalg.inv(Ba)
        self._Z2 = Z2_spline

    def __call__(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        A1, dA1, C1 = _stage_one_at(self._splines, ts, self._const_B,
                                    self._anchor)[:3]
        B, B_inv = self._Ba, self._B_inv
        A1T = np.swapaxes(A1, 1, 2)
        W = 0.5 * (B_inv @ A1 + A1T @ B_inv)
        dW = 0.5 * (B_inv @ dA1 + np.swapaxes(dA1, 1, 2) @ B_inv)
        Z2 = self._Z2(ts)
        Z2inv = np.linalg.inv(Z2)
        inner = W @ A1 + C1 - W @ B @ W + A1T @ W + dW
        Ct = np.swapaxes(Z2inv, 1, 2) @ inner @ Z2inv
        R = B @ _sym_stack(Ct)
        return R[0] if np.isscalar(t) or np.ndim(t) == 0 else R


def flatten_B(X: SympDiffSystem, fd_step=None, defect_tol=1e-8, refine=1):
    """Isomorphism making B constant: Z B(t) Z^T = B(a), W = 0.

    For n <= 2 the congruence factor comes from a closed-form chain
    (square root / Cholesky / eigen decomposition of B with analytic
    derivatives), so the transport is exact at every sample; larger blocks
    fall back to integrating Z' = -1/2 Z B' B^-1.  Returns (X_flat, iso)
    after verifying the transport defect ||Z B Z^T - B(a)|| is below
    ``defect_tol``.  ``refine`` multiplies the internal working grid.
    ``fd_step`` is accepted for backward compatibility and ignored.
    """
    n = X.n
    th, hw, A1, dA1, C1, Ba, Z, dZ, defect, _ = _flatten_stage(X, refine)
    if defect > defect_tol:
        raise RuntimeError(
            f"flatten_B transport defect {defect:.3e} > {defect_tol:.0e} "
            "(grid too coarse or B near-degenerate)")

    zeros = np.zeros_like(Z)
    iso = _sampled_iso(th, Z, zeros, dZ, zeros)
    sl = slice(None, None, 2)
    Bt = np.broadcast_to(Ba, A1[sl].shape).copy()
    X_flat = SympDiffSystem.from_samples(n, X.a, X.b, A1[sl], Bt, C1[sl],
                                         label=X.label + "/flatB")
    return X_flat, iso


def to_morse_sturm(X: SympDiffSystem, zero_tol=1e-9, defect_tol=1e-8,
                   refine=1):
    """Reduce a nondegenerate system to Morse-Sturm form (A = 0, B constant).

    Stage one flattens B through a congruence with analytic derivatives;
    stage two removes A with W = 1/2 (B^-1 A + A^T B^-1) and Z solving
    Z' = Z (B W - A).  The generator B W - A lies in the Lie algebra of the
    isometry group of B identically, and the transported A block vanishes
    identically by the same algebra, so the only numerical error left is
    the flow integration of Z.  Returns (MorseSturm, iso) with iso the
    composite of both stages.  ``defect_tol`` bounds the transport
    residuals; ``refine`` multiplies the internal working grid.
    """
    if not X.is_nondegenerate(zero_tol):
        raise ValueError("to_morse_sturm requires a nondegenerate system")
    n = X.n

    th, hw, A1, dA1, C1, B, Z1, dZ1, defect1, anchor = _flatten_stage(X, refine)
    if defect1 > defect_tol:
        raise RuntimeError(
            f"flatten_B transport defect {defect1:.3e} > {defect_tol:.0e} "
            "(grid too coarse or B near-degenerate)")
    zeros = np.zeros_like(Z1)
    iso1 = _sampled_iso(th, Z1, zeros, dZ1, zeros)

    A1T = np.swapaxes(A1, 1, 2)
    B_inv = np.linalg.inv(B)
    W = 0.5 * (B_inv @ A1 + A1T @ B_inv)
    dW = 0.5 * (B_inv @ dA1 + np.swapaxes(dA1, 1, 2) @ B_inv)
    G = B @ W - A1

    MT, _ = kernels.propagate(np.swapaxes(G, 1, 2), hw, J=None)
    Z2 = np.swapaxes(MT, 1, 2)

    tsw = th[::2]
    W2, dW2 = W[::2], dW[::2]
    dZ2 = Z2 @ G[::2]
    iso2 = _sampled_iso(tsw, Z2, W2, dZ2, dW2)

    Z2T = np.swapaxes(Z2, 1, 2)
    ZB_res = float(np.max(np.abs(Z2 @ B @ Z2T - B)))
    if ZB_res > defect_tol:
        raise RuntimeError(f"B transport defect {ZB_res:.3e} > {defect_tol:.0e}")

    g = np.linalg.inv(B)
    if anchor is not None:
        splines = _coeff_splines(X, th)
        const_B = _is_const_B(splines[1], th)
        Rcurve = _ReducedCurve(splines, const_B, anchor, B,
                               CubicSpline(tsw, Z2, axis=0))
    else:
        # flow-fallback stage one: interpolate the sampled curvature
        Z2inv = np.linalg.inv(Z2)
        Aw, Cw = A1[::2], C1[::2]
        inner = (W2 @ Aw + Cw - W2 @ B @ W2
                 + np.swapaxes(Aw, 1, 2) @ W2 + dW2)
        Ct = np.swapaxes(Z2inv, 1, 2) @ inner @ Z2inv
        Rcurve = CubicSpline(tsw, B @ _sym_stack(Ct), axis=0)

    ms = MorseSturm(g=g, Rcurve=Rcurve,
                    a=X.a, b=X.b, grid_N=X.grid_N,
                    label=(X.label + "/ms") if X.label else "reduced")
    return ms, compose_iso(iso2, iso1)

