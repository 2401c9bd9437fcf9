"""Prescribing conjugate instants: from a compact set F to a geodesic system.

The constructive chain: a smooth f >= 0 vanishing exactly on F gives
R = 1 - f, the 2x2 curve rho(t) traces a circle of radius R(t) around the
identity in the space of symmetric forms and touches the degenerate cone
exactly when R = 1, i.e. on F.  Pulling rho back through a Grassmannian
chart gives a Lagrangian curve with nondegenerate derivative whose
non-transversality instants with L0 are exactly F; an extension argument
(convex-integration style: build the derivative first, then integrate)
connects the curve to L0 at t = a without creating new instants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numutil import cumulative_simpson, smoothstep, uniform_grid
from .symform import (
    SymmetricForm,
    distance_to_degenerate,
    index_path_evaluator,
    inertia,
)
from .symplectic import (
    LagrangianFrame,
    chart,
    chart_inverse,
    complement_with_chart_value,
    intersection_dim,
)

__all__ = [
    "ClosedSetDescriptor",
    "SmoothScalarCurve",
    "vanishing_function",
    "rho_curve",
    "rho_prime",
    "extend_average",
    "extend_forms",
    "extend_lagrangian",
    "build_prescribed",
    "agreement_in_steps",
    "PrescribedBundle",
    "StageError",
]

# bump shape constants, tuned so the profile clears the detector floor a
# few grid steps away from its zero set while its first three derivatives
# stay within the documented per-gap budget
BUMP_BETA = 2.0
BUMP_POWER = 0.3
RAMP_BETA = 1.6
RAMP_POWER = 0.3
# ramps live on a deliberately short length scale (a fixed fraction of the
# window): the derivative budget is per-scale, so a short scale buys the
# steep rise needed for the detected set to match F at grid resolution,
# exactly as short interior gaps do naturally
RAMP_SCALE_FRACTION = 0.05
RAMP_AMPLITUDE = 0.5
PLATEAU_OFFSET = 0.1
PLATEAU_WIDTH = 0.3
# derivative budget: each bump on a gap of length L keeps its i-th
# derivative below 2^-r (K/L)^i with K the dimensionless constant below.
# An absolute (L-free) bound as in the infinite-resolution construction
# would force f below sup|f'''| (10h)^3 / 6 ~ 1e-12 ten grid steps from
# the zero set, contradicting the required separation floor, so the
# finite-resolution surrogate scales the budget with the gap.
DERIV_BUDGET_SCALE = 20.0
P_SCALE_FALLBACKS = (1.0, 0.5, 2.0, 0.25, 4.0)
MIN_HORIZON_STEPS = 10
# relative detection threshold for pipeline systems, whose d(t) is
# infinitely flat (not a polynomial-order zero) on the prescribed set
DETECT_ZERO_TOL = 1e-5


class StageError(RuntimeError):
    """Pipeline failure labeled with the stage that raised it."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


# ---------------------------------------------------------------------------
# the prescribed set


@dataclass(frozen=True)
class ClosedSetDescriptor:
    """A finite union of closed intervals (points as degenerate intervals)
    inside an ambient interval ]a, b], with inf F > a."""

    intervals: tuple
    a: float
    b: float

    def __init__(self, intervals, a, b):
        a, b = float(a), float(b)
        if not b > a:
            raise ValueError("need a < b")
        ivs = sorted((float(lo), float(hi)) for lo, hi in intervals)
        for lo, hi in ivs:
            if hi < lo:
                raise ValueError(f"interval ({lo}, {hi}) reversed")
            if lo <= a or hi > b:
                raise ValueError(f"interval ({lo}, {hi}) outside ]{a}, {b}]")
        merged = []
        for lo, hi in ivs:
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        object.__setattr__(self, "intervals", tuple(merged))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def parse(cls, text, a, b):
        """Parse "x" (point) and "lo:hi" (interval) items joined by ";"."""
        items = []
        for raw in (text or "").split(";"):
            raw = raw.strip()
            if not raw:
                continue
            if ":" in raw:
                lo, hi = raw.split(":")
                items.append((float(lo), float(hi)))
            else:
                x = float(raw)
                items.append((x, x))
        return cls(items, a, b)

    def describe(self):
        parts = []
        for lo, hi in self.intervals:
            parts.append(f"{lo:g}" if lo == hi else f"{lo:g}:{hi:g}")
        return ";".join(parts)

    @property
    def empty(self):
        return not self.intervals

    @property
    def inf(self):
        if self.empty:
            raise ValueError("empty set has no inf")
        return self.intervals[0][0]

    @property
    def sup(self):
        if self.empty:
            raise ValueError("empty set has no sup")
        return self.intervals[-1][1]

    def distance(self, t):
        """Pointwise distance to the set; vectorized."""
        t = np.asarray(t, dtype=float)
        if self.empty:
            return np.full_like(t, np.inf)
        d = np.full(t.shape, np.inf)
        for lo, hi in self.intervals:
            d = np.minimum(d, np.maximum.reduce([lo - t, t - hi,
                                                 np.zeros_like(t)]))
        return d

    def contains(self, t, tol=0.0):
        return np.asarray(self.distance(t)) <= tol

    def gaps(self):
        """Complementary open intervals: ("left", None, lo_min), bounded
        ("gap", lo, hi) pieces, and ("right", hi_max, None)."""
        if self.empty:
            return []
        out = [("left", None, self.intervals[0][0])]
        for (l0, h0), (l1, h1) in zip(self.intervals, self.intervals[1:]):
            out.append(("gap", h0, l1))
        out.append(("right", self.intervals[-1][1], None))
        return out


# ---------------------------------------------------------------------------
# the vanishing function of the prescribed set


@dataclass
class SmoothScalarCurve:
    """A scalar curve with analytic value and derivative evaluators."""

    value: object
    deriv: object
    domain: tuple
    note: str = ""

    def __call__(self, t):
        return self.value(t)


def _bump_shape(s, beta=BUMP_BETA, p=BUMP_POWER):
    """Flat-at-both-ends profile on (0, 1), peak value 1 at s = 1/2."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(np.broadcast(s).shape)
    inside = (s > 0.0) & (s < 1.0)
    q = 4.0 * s[inside] * (1.0 - s[inside])
    with np.errstate(over="ignore", under="ignore"):
        out[inside] = np.exp(beta * (1.0 - q ** (-p)))
    return out


def _bump_shape_deriv(s, beta=BUMP_BETA, p=BUMP_POWER):
    s = np.asarray(s, dtype=float)
    out = np.zeros(np.broadcast(s).shape)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    q = 4.0 * si * (1.0 - si)
    with np.errstate(over="ignore", under="ignore"):
        val = np.exp(beta * (1.0 - q ** (-p)))
        out[inside] = val * beta * p * q ** (-p - 1.0) * 4.0 * (1.0 - 2.0 * si)
    return out


def _ramp_shape(d, beta=RAMP_BETA, p=RAMP_POWER):
    """Flat C-infinity ramp in the distance d to the set: exp(-beta d^-p)."""
    d = np.asarray(d, dtype=float)
    out = np.zeros(np.broadcast(d).shape)
    pos = d > 0.0
    with np.errstate(over="ignore", under="ignore"):
        out[pos] = np.exp(-beta * d[pos] ** (-p))
    return out


def _ramp_shape_deriv(d, beta=RAMP_BETA, p=RAMP_POWER):
    d = np.asarray(d, dtype=float)
    out = np.zeros(np.broadcast(d).shape)
    pos = d > 0.0
    with np.errstate(over="ignore", under="ignore"):
        dp = d[pos]
        out[pos] = np.exp(-beta * dp ** (-p)) * beta * p * dp ** (-p - 1.0)
    return out


def _smoothstep_deriv(x):
    """Derivative of the C-infinity step in numutil.smoothstep."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(np.broadcast(x).shape)
    mid = (x > 0.0) & (x < 1.0)
    xm = x[mid]
    with np.errstate(over="ignore", under="ignore"):
        r1 = np.exp(-1.0 / xm)
        r2 = np.exp(-1.0 / (1.0 - xm))
        out[mid] = r1 * r2 * (xm ** -2 + (1.0 - xm) ** -2) / (r1 + r2) ** 2
    return out


def _profile_norm(val_fn, lo, hi, n_orders=3, n_samples=20001,
                  K=DERIV_BUDGET_SCALE):
    """max(1, C_i / K^i) for the unit-coordinate profile on [lo, hi]."""
    ts = np.linspace(lo, hi, n_samples)
    h = (hi - lo) / (n_samples - 1)
    v = val_fn(ts)
    worst = 1.0
    for i in range(1, n_orders + 1):
        v = np.gradient(v, h)
        worst = max(worst, float(np.max(np.abs(v))) / K ** i)
    return worst


_BUMP_NORM = None
_RAMP_NORM = None


def _bump_norm():
    global _BUMP_NORM
    if _BUMP_NORM is None:
        _BUMP_NORM = _profile_norm(_bump_shape, 0.0, 1.0)
    return _BUMP_NORM


def _ramp_norm():
    global _RAMP_NORM
    if _RAMP_NORM is None:
        _RAMP_NORM = _profile_norm(_ramp_shape, 0.0, 3.0)
    return _RAMP_NORM


def vanishing_function(F: ClosedSetDescriptor) -> SmoothScalarCurve:
    """A smooth f: [window] -> [0, 1[ with f = 0 exactly on F.

    One bump per complementary open interval, positive exactly there.  The
    r-th bump on a gap of length L is scaled so its i-th derivative stays
    below 2^-r (K/L)^i for i <= 3 (the scale-adapted finite surrogate of
    the all-orders bound; only C^3 smoothness is consumed downstream, and
    an L-free budget would be incompatible with the separation floor, see
    the constant block above).  Smaller gaps get smaller r so their bumps
    keep the largest admissible amplitude.
    """
    a, b = F.a, F.b
    margin = 0.2 * (b - a)
    window = (a - margin, b + margin)

    if F.empty:
        return SmoothScalarCurve(
            value=lambda t: np.full(np.broadcast(np.asarray(t)).shape, 0.5),
            deriv=lambda t: np.zeros(np.broadcast(np.asarray(t)).shape),
            domain=window, note="empty set: constant 1/2")

    bounded = [(lo, hi) for kind, lo, hi in F.gaps() if kind == "gap"]
    bounded.sort(key=lambda g: g[1] - g[0])
    pieces = []            # (value_fn, deriv_fn) pairs, already scaled
    Ls = RAMP_SCALE_FRACTION * (b - a)
    r = 1
    for lo, hi in bounded:
        L = hi - lo
        if L >= 3.0 * Ls:
            # wide gap: a single bump scaled to the gap rises too slowly at
            # the shoulders for the detected set to match F at grid
            # resolution; use the same short-scale ramps as the unbounded
            # sides, one per shoulder, multiplied so the piece stays
            # positive exactly on the open gap
            def vf(t, lo=lo, hi=hi, Ls=Ls):
                t = np.asarray(t, float)
                return (_ramp_shape((t - lo) / Ls)
                        * _ramp_shape((hi - t) / Ls))

            def df(t, lo=lo, hi=hi, Ls=Ls):
                t = np.asarray(t, float)
                rl = _ramp_shape((t - lo) / Ls)
                rr = _ramp_shape((hi - t) / Ls)
                dl = _ramp_shape_deriv((t - lo) / Ls) / Ls
                dr = _ramp_shape_deriv((hi - t) / Ls) / Ls
                return dl * rr - rl * dr

            c = 2.0 ** (-r) / _ramp_norm()
        else:
            vf = (lambda t, lo=lo, L=L:
                  _bump_shape((np.asarray(t, float) - lo) / L))
            df = (lambda t, lo=lo, L=L:
                  _bump_shape_deriv((np.asarray(t, float) - lo) / L) / L)
            c = 2.0 ** (-r) / _bump_norm()
        pieces.append((lambda t, vf=vf, c=c: c * vf(t),
                       lambda t, df=df, c=c: c * df(t)))
        r += 1
    # unbounded sides: ramps in the scaled distance to the extreme points
    m0, m1 = F.inf, F.sup
    for sign, edge in ((-1.0, m0), (+1.0, m1)):
        span = (edge - window[0]) if sign < 0 else (window[1] - edge)
        Lr = min(span, RAMP_SCALE_FRACTION * (b - a))
        vf = (lambda t, s=sign, e=edge, Lr=Lr:
              _ramp_shape(s * (np.asarray(t, float) - e) / Lr))
        df = (lambda t, s=sign, e=edge, Lr=Lr:
              s / Lr * _ramp_shape_deriv(s * (np.asarray(t, float) - e) / Lr))
        c = 2.0 ** (-r) / _ramp_norm()
        pieces.append((lambda t, vf=vf, c=c: c * vf(t),
                       lambda t, df=df, c=c: c * df(t)))
        r += 1
    # plateau terms on the unbounded sides: exactly zero within 10% of the
    # distance to the domain end, then rising smoothly to 1/2.  They keep f
    # of order one away from F -- the associated curve of symmetric forms
    # would otherwise hug the degenerate cone over the whole interval,
    # which degrades the chart-extension stage -- while staying flat where
    # the ramps manage the delicate C-infinity contact with F.
    for sign, edge, end in ((-1.0, m0, a), (+1.0, m1, b)):
        span = sign * (end - edge)
        if span <= 0.0:
            continue
        # y = fraction of the way from the edge of F to the domain end
        vf = (lambda t, s=sign, e=edge, span=span:
              RAMP_AMPLITUDE * smoothstep(
                  (s * (np.asarray(t, float) - e) / span - PLATEAU_OFFSET)
                  / PLATEAU_WIDTH))
        df = (lambda t, s=sign, e=edge, span=span:
              RAMP_AMPLITUDE * _smoothstep_deriv(
                  (s * (np.asarray(t, float) - e) / span - PLATEAU_OFFSET)
                  / PLATEAU_WIDTH) * s / (span * PLATEAU_WIDTH))
        pieces.append((vf, df))

    def value(t):
        t = np.asarray(t, dtype=float)
        return sum(vf(t) for vf, _ in pieces)

    def deriv(t):
        t = np.asarray(t, dtype=float)
        return sum(df(t) for _, df in pieces)

    return SmoothScalarCurve(value=value, deriv=deriv, domain=window,
                             note=f"{len(pieces)} bumps for F={F.describe()}")


# ---------------------------------------------------------------------------
# the rho curve of the main construction


def rho_curve(R, t) -> SymmetricForm:
    """rho(t) = Id + R(t) (cos t, sin t; sin t, -cos t); requires R(t) > 0.

    Its determinant is 1 - R(t)^2, so rho is degenerate exactly when
    R(t) = 1; in the 3-space of 2x2 symmetric forms the curve lives in a
    plane orthogonal to the axis of the degenerate double cone, at distance
    1 - R(t) from the cone's circle.
    """
    Rt = float(R.value(t)) if isinstance(R, SmoothScalarCurve) else float(R(t))
    if Rt <= 0.0:
        raise ValueError(f"rho_curve needs R(t) > 0, got {Rt} at t = {t}")
    ct, st = np.cos(t), np.sin(t)
    return SymmetricForm([[1.0 + Rt * ct, Rt * st], [Rt * st, 1.0 - Rt * ct]])


def rho_prime(R, t) -> SymmetricForm:
    """Analytic derivative of rho; det rho' = -(R^2 + R'^2) identically."""
    if isinstance(R, SmoothScalarCurve):
        Rt, dRt = float(R.value(t)), float(R.deriv(t))
    else:
        raise TypeError("rho_prime needs a SmoothScalarCurve")
    ct, st = np.cos(t), np.sin(t)
    e11 = dRt * ct - Rt * st
    e12 = dRt * st + Rt * ct
    return SymmetricForm([[e11, e12], [e12, -e11]])


# ---------------------------------------------------------------------------
# the averaged extension (convex-integration step)


class InertiaClass:
    """The open set of nondegenerate symmetric forms of fixed inertia."""

    def __init__(self, reference):
        ref = np.asarray(reference, dtype=float)
        self.inertia = inertia(ref)
        if self.inertia[2]:
            raise ValueError("reference form is degenerate")
        self.n = ref.shape[0]

    def contains(self, S):
        return inertia(np.asarray(S, dtype=float)) == self.inertia

    def radius(self, S):
        """Distance from S to the degenerate cone (ball radius inside U)."""
        return distance_to_degenerate(np.asarray(S, dtype=float))

    def path(self, S0, S1):
        """Smooth path [0,1] -> U between two members (n = 2 machinery)."""
        return index_path_evaluator(np.asarray(S0, float),
                                    np.asarray(S1, float))


@dataclass
class AveragedExtension:
    """Result of extend_average: tau plus the proof-side diagnostics."""

    tau: object               # callable t -> (n, n), smooth on [a, b]
    M: float
    delta: np.ndarray
    epsilon: float
    gamma_sup_dist: float     # sup ||gamma_tilde - u||
    u: np.ndarray


def extend_average(taubar, u, space: InertiaClass, a, c, b,
                   eta, n_quad=4096, min_eps=0.0) -> AveragedExtension:
    """Extend taubar: [c, b] -> U to [a, b] with prescribed average.

    The extension tau is constant on [a, c - eta], stays in U, agrees with
    taubar on [c, b] and integrates to u (c - a) over [a, c].  ``taubar``
    must be evaluable slightly to the left of c (a margin of about a tenth
    of c - a) so the connecting curve can match it smoothly at c.

    Construction (following the convex-integration recipe): a connecting
    curve gamma_tilde from u to taubar(c) inside U, flat-ended and blended
    into taubar near c; a monotone reparameterization gamma that is
    constant = u on [c - eps, c - eps/2]; a two-piece partition of unity;
    and the constant correction delta = -int(phi2 (gamma - u)) / int(phi1)
    that enforces the average exactly.
    """
    u = np.asarray(u, dtype=float)
    if not space.contains(u):
        raise ValueError("base point u is outside the target inertia class")
    if not (a < c <= b):
        raise ValueError("need a < c <= b")

    tau_c = np.asarray(taubar(c), dtype=float)
    r_c = space.radius(tau_c)
    # blend margin: taubar's natural left extension stays within the safe
    # ball around taubar(c)
    m = 0.1 * (c - a)
    while m > 1e-6 * (c - a):
        probe = np.linspace(c - m, c, 33)
        vals = np.array([taubar(t) for t in probe])
        if np.max(np.abs(vals - tau_c)) < 0.5 * r_c:
            break
        m *= 0.5
    else:
        raise ValueError("taubar varies too fast left of c for a smooth blend")

    path = space.path(u, tau_c)

    def gamma_tilde(t):
        # domain [c - 1, b] in the rescaled sense: the connecting leg lives
        # on [c - 1, c - m], the blend into taubar on [c - m, c]
        if t >= c:
            return np.asarray(taubar(t), dtype=float)
        s = (t - (c - 1.0)) / (1.0 - m)
        g1 = path(min(smoothstep(s), 1.0))
        if t <= c - m:
            return np.asarray(g1, dtype=float)
        chi = smoothstep((t - (c - m)) / m)
        return (1.0 - chi) * np.asarray(g1, dtype=float) \
            + chi * np.asarray(taubar(t), dtype=float)

    # sup norms for the Lemma constants
    probe = np.linspace(c - 1.0, b, 257)
    gvals = np.array([gamma_tilde(t) for t in probe])
    sup_gamma = float(np.max(np.linalg.norm(gvals, ord=2, axis=(1, 2))))
    sup_dist = float(np.max(np.linalg.norm(gvals - u, ord=2, axis=(1, 2))))
    M = float(np.linalg.norm(u, ord=2)) + 1.0 + sup_gamma

    r_u = space.radius(u)
    bound_target = min(r_u, 1.0)
    eps = min(eta, 0.5 * (c - a))
    for _ in range(80):
        if eps / (c - a - eps) * sup_dist < bound_target:
            break
        eps *= 0.5
    else:
        raise ValueError("no epsilon satisfies the smallness condition")
    if eps < min_eps:
        raise ValueError(
            f"epsilon {eps:.3e} below the resolvable width {min_eps:.3e}; "
            "the transition would fall between grid nodes")

    def psi(t):
        # monotone reparameterization [c - eps, b] -> [c - 1, b]:
        # constant c - 1 on [c - eps, c - eps/2], identity near c
        if t >= c:
            return t
        chi = smoothstep((t - (c - eps / 2.0)) / (eps / 2.0))
        return (1.0 - chi) * (c - 1.0) + chi * t

    def gamma(t):
        return gamma_tilde(psi(t))

    def phi2(t):
        return smoothstep((t - (c - eps)) / (eps / 2.0))

    # quadrature of the correction: the integrand is supported on [c-eps, c]
    ts = np.linspace(c - eps, c, 2 * (n_quad // 2) + 1)
    h = ts[1] - ts[0]
    p2 = phi2(ts)
    gv = np.array([gamma(t) for t in ts])
    num = cumulative_simpson(p2[:, None, None] * (gv - u), h)[-1]
    int_phi1 = (c - eps - a) + (eps - cumulative_simpson(p2, h)[-1])
    delta = -num / int_phi1
    if not space.contains(u + delta):
        raise ValueError("average correction leaves the inertia class "
                         f"(||delta|| = {np.linalg.norm(delta):.3e})")

    def tau(t):
        if t >= c:
            return np.asarray(taubar(t), dtype=float)
        p2t = phi2(t)
        base = (1.0 - p2t) * (u + delta)
        if p2t > 0.0:
            base = base + p2t * gamma(t)
        return base

    return AveragedExtension(tau=tau, M=M, delta=delta, epsilon=eps,
                             gamma_sup_dist=sup_dist, u=u)


# ---------------------------------------------------------------------------
# extension of curves of symmetric forms (Corollary level)


@dataclass
class FormExtension:
    """sigma on the grid of [a, b'], matching sigmabar on [c, b']."""

    ts: np.ndarray
    sigma: np.ndarray         # (K+1, n, n)
    c: float
    ext: AveragedExtension
    eta: float
    correction: float         # size of the linear quadrature-defect fix


def extend_forms(sigmabar, dsigmabar, a, c, bprime, grid_ts,
                 eta=None) -> FormExtension:
    """Extend sigmabar: [c, b'] -> B_sym to [a, b'] with sigma(a) = 0.

    sigma is nondegenerate on ]a, c] and sigma' is nondegenerate of the
    inertia of sigmabar'(c) throughout.  Preconditions: sigmabar(c)
    nondegenerate with the same inertia as sigmabar'(c).  ``grid_ts`` are
    the working nodes of [a, b'] (containing c); ``sigmabar``/``dsigmabar``
    must be evaluable slightly left of c.
    """
    sc_val = np.asarray(sigmabar(c), dtype=float)
    dsc = np.asarray(dsigmabar(c), dtype=float)
    in_s, in_d = inertia(sc_val), inertia(dsc)
    if in_s[2] or in_d[2]:
        raise ValueError("sigmabar(c) or sigmabar'(c) degenerate")
    if in_s != in_d:
        raise ValueError(f"inertia mismatch: sigma(c) {in_s} vs "
                         f"sigma'(c) {in_d} (Corollary precondition)")

    space = InertiaClass(sc_val)
    u = sc_val / (c - a)
    r = distance_to_degenerate(sc_val)

    ts = np.asarray(grid_ts, dtype=float)
    h = ts[1] - ts[0]
    min_eps = 8.0 * h
    ic = int(np.argmin(np.abs(ts - c)))
    if abs(ts[ic] - c) > 1e-9 * (ts[-1] - ts[0]):
        raise ValueError("c must lie on the working grid")

    # provisional M for the eta choice (the Lemma's M is confirmed below)
    if eta is None:
        probe = np.linspace(c, bprime, 65)
        sup_tau = max(float(np.linalg.norm(dsigmabar(t), ord=2))
                      for t in probe)
        M_est = float(np.linalg.norm(u, ord=2)) + 1.0 \
            + max(sup_tau, float(np.linalg.norm(u, ord=2)))
        eta = 0.5 * r / M_est
    eta = min(eta, 0.5 * (c - a))

    ext = extend_average(dsigmabar, u, space, a, c, bprime, eta,
                         min_eps=min_eps)
    if eta * ext.M >= r:
        eta = 0.5 * r / ext.M
        ext = extend_average(dsigmabar, u, space, a, c, bprime, eta,
                             min_eps=min_eps)

    # integrate tau at half-step resolution for quadrature headroom
    ts_fine = np.linspace(ts[0], ts[-1], 2 * (ts.size - 1) + 1)
    tau_fine = np.array([ext.tau(t) for t in ts_fine])
    sigma = cumulative_simpson(tau_fine, h / 2.0)[::2]
    # linear defect correction: the exact construction gives
    # sigma(c) = sigmabar(c); attribute the quadrature defect linearly so
    # the match at c is exact while sigma(a) stays 0
    defect = sc_val - sigma[ic]
    corr = float(np.max(np.abs(defect)))
    ramp = ((ts - ts[0]) / (c - a))[:, None, None]
    sigma = sigma + defect * np.minimum(ramp, 1.0)
    # beyond c, use sigmabar itself (the extension agrees by construction)
    for k in range(ic + 1, ts.size):
        sigma[k] = np.asarray(sigmabar(ts[k]), dtype=float)
    sigma[0] = 0.0
    return FormExtension(ts=ts, sigma=sigma, c=ts[ic], ext=ext, eta=eta,
                         correction=corr)


# ---------------------------------------------------------------------------
# extension of Lagrangian curves (Proposition level)


@dataclass
class LagrangianExtension:
    ts: np.ndarray
    frames: np.ndarray        # (N+1, 2n, n)
    c: float
    bprime: float
    P: np.ndarray
    forms: FormExtension


def _transversality_margin(L1_orth, L2_orth):
    """Scale-free transversality of two subspaces: smallest singular value
    of the stacked orthonormal frames (0 iff they intersect)."""
    sv = np.linalg.svd(np.hstack([L1_orth, L2_orth]), compute_uv=False)
    return float(sv[-1])


def _signature_orientations(iner):
    """Candidate nondegenerate forms of the given inertia.

    For the split 2x2 case the diagonal signature matrix has three rotated
    siblings G(phi) = [[cos, sin], [sin, -cos]]; which orientation yields a
    complement with a healthy chart horizon depends on where the input
    curve hugs the degenerate cone, so all four are offered.  Other
    inertias get the plain diagonal signature matrix.
    """
    n = iner[0] + iner[1]
    if (iner[0], iner[1]) == (1, 1):
        return [np.array([[np.cos(phi), np.sin(phi)],
                          [np.sin(phi), -np.cos(phi)]])
                for phi in (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)]
    return [np.diag(np.concatenate([np.ones(iner[0]), -np.ones(iner[1])]))]


def extend_lagrangian(xibar, xi0, a, c, b, grid_ts,
                      P=None, min_margin=0.1) -> LagrangianExtension:
    """Extend a Lagrangian curve xibar: [c, b] -> Lambda down to xi(a) = xi0.

    xibar(c) must be transverse to xi0 and xibar' nondegenerate.  A chart
    complement xi1 with prescribed chart value P at xibar(c) is built, the
    chart horizon b' (largest grid time with xibar([c, b']) transverse to
    xi1) is found by scanning, the form-level extension runs inside the
    chart, and the result is glued with xibar beyond b'.  P defaults to the
    diagonal signature matrix with the inertia of xibar'(c); a short list
    of rescalings is tried when the chart horizon is too short.
    """
    ts = np.asarray(grid_ts, dtype=float)
    h = ts[1] - ts[0]
    ic = int(np.argmin(np.abs(ts - c)))
    c = ts[ic]

    F0 = xi0.columns if isinstance(xi0, LagrangianFrame) else np.asarray(xi0)
    n = F0.shape[1]
    Lc = np.asarray(xibar(c), dtype=float)
    if intersection_dim(Lc, F0) != 0:
        raise ValueError("xibar(c) is not transverse to xi0")

    # inertia of xibar'(c) through a chart centered at xibar(c)
    from .symplectic import canonical_J, orthonormal_frame
    Fc = orthonormal_frame(Lc)
    Jc = canonical_J(n)
    Sm = chart(Fc, Jc @ Fc, xibar(c - h)).entries
    Sp = chart(Fc, Jc @ Fc, xibar(c + h)).entries
    iner = inertia((Sp - Sm) / (2 * h))
    if iner[2]:
        raise ValueError("xibar'(c) is degenerate")
    bases = _signature_orientations(iner) if P is None \
        else [np.asarray(P, dtype=float)]
    scales = P_SCALE_FALLBACKS if P is None else (1.0,)

    # the extension only consumes the chart near c; capping the working
    # horizon keeps the chart coordinates (and hence the Lemma constants
    # M, eta) moderate even when transversality survives to b with a
    # thin margin
    k_cap = min(ic + max(8 * MIN_HORIZON_STEPS, ts.size // 10), ts.size - 1)
    Lq = np.empty((k_cap - ic + 1, 2 * n, n))
    for j in range(Lq.shape[0]):
        Lq[j] = orthonormal_frame(np.asarray(xibar(ts[ic + j]), dtype=float))

    last_err = None
    for P_base in bases:
        for scale in scales:
            P_try = scale * P_base
            try:
                xi1 = complement_with_chart_value(Lc, F0, P_try)
            except ValueError as exc:
                last_err = exc
                continue
            F1 = xi1.columns
            F1q = orthonormal_frame(F1)
            # chart horizon scan: the curve must stay transverse to xi1
            margins = np.linalg.svd(
                np.concatenate(
                    [Lq, np.broadcast_to(F1q, Lq.shape)], axis=2),
                compute_uv=False)[:, -1]
            bad = np.nonzero(margins < min_margin)[0]
            k_hi = k_cap if bad.size == 0 else ic + int(bad[0]) - 1
            if k_hi - ic < MIN_HORIZON_STEPS:
                last_err = ValueError(
                    f"chart horizon too short ({k_hi - ic} steps) for "
                    f"P = {scale} x orientation")
                continue
            lag = _try_extension(xibar, F0, F1, P_try, a, c, ts, ic, k_hi,
                                 h, n)
            if isinstance(lag, Exception):
                last_err = lag
                continue
            return lag

    raise ValueError(f"no admissible chart complement found: {last_err}")


def _try_extension(xibar, F0, F1, P_try, a, c, ts, ic, k_hi, h, n):
    """One candidate chart: run the form-level extension and glue frames."""
    bprime = ts[k_hi]

    def sigmabar(t):
        return chart(F0, F1, np.asarray(xibar(t))).entries

    def dsigmabar(t):
        return (np.asarray(sigmabar(t - 2 * h)) - 8 * np.asarray(sigmabar(t - h))
                + 8 * np.asarray(sigmabar(t + h))
                - np.asarray(sigmabar(t + 2 * h))) / (12 * h)

    try:
        forms = extend_forms(sigmabar, dsigmabar, a, c, bprime,
                             ts[:k_hi + 1])
    except ValueError as exc:
        return exc

    frames = np.empty((ts.size, 2 * n, n))
    for k in range(ts.size):
        if k == 0:
            frames[k] = F0
        elif k <= k_hi:
            frames[k] = chart_inverse(F0, F1, forms.sigma[k]).columns
        else:
            frames[k] = np.asarray(xibar(ts[k]), dtype=float)
    return LagrangianExtension(ts=ts, frames=frames, c=c, bprime=bprime,
                               P=P_try, forms=forms)


# ---------------------------------------------------------------------------
# the end-to-end construction


@dataclass
class PrescribedBundle:
    F: ClosedSetDescriptor
    f: SmoothScalarCurve
    abstract: object          # AbstractSystem
    system: object            # SympDiffSystem (realized)
    morse_sturm: object       # MorseSturm
    report: object            # ConjugateReport
    extension: LagrangianExtension
    index: tuple = field(default=(False, 0))


def agreement_in_steps(F: ClosedSetDescriptor, report, grid_N=None):
    """Worst grid-level disagreement between the detected set and F.

    Scans every grid node: a node in F must lie within the returned number
    of grid steps of a detected instant or cluster, and a detected node
    must lie within that many steps of F.  Returns 0.0 for perfect
    agreement (half-step rounding included in the node coverage).
    """
    ts = report.ts
    h = ts[1] - ts[0]
    in_F = np.array([F.contains(t) for t in ts])
    detected = report.flagged_nodes()
    worst = 0.0
    for k in np.nonzero(in_F != detected)[0]:
        t = ts[k]
        if in_F[k]:
            dmin = min((abs(t - inst.t) for inst in report.instants),
                       default=np.inf)
            for lo, hi in report.clusters:
                dmin = 0.0 if lo <= t <= hi else min(dmin, abs(t - lo),
                                                     abs(t - hi))
        else:
            dmin = F.distance(t)
        worst = max(worst, dmin / h)
    return float(worst)


def build_prescribed(F: ClosedSetDescriptor, grid_N=4096,
                     zero_tol=None, with_report=True) -> PrescribedBundle:
    """Theorem-level pipeline: conjugate instants prescribed to equal F.

    Chain: f vanishing exactly on F; R = 1 - f; the rho curve pulled back
    through the chart at (L0, horizontal); extension down to L0 at a;
    realization as a differential system; reduction to Morse-Sturm form;
    independent detection.
    """
    from .abstract import AbstractSystem, abstract_index, realize_system
    from .sds import conjugate_instants, fundamental_matrix, to_morse_sturm

    a, b = F.a, F.b
    ts = uniform_grid(a, b, grid_N)
    n = 2

    stage = "vanishing_function"
    try:
        f = vanishing_function(F)
        R = SmoothScalarCurve(value=lambda t: 1.0 - f.value(t),
                              deriv=lambda t: -f.deriv(t),
                              domain=f.domain, note="R = 1 - f")
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    stage = "chart_pullback"
    try:
        xi0 = LagrangianFrame.L0(n)
        xi1 = LagrangianFrame.horizontal(n)
        c_target = (a + (F.inf if not F.empty else a + 0.5 * (b - a))) / 2.0
        ic = max(int(round((c_target - a) / ((b - a) / grid_N))),
                 MIN_HORIZON_STEPS + 2)
        c = ts[ic]
        if not F.empty and c >= F.inf:
            raise ValueError("grid too coarse to fit c strictly below inf F")

        def xibar(t):
            return chart_inverse(xi0, xi1, rho_curve(R, t)).columns
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    stage = "extend_lagrangian"
    try:
        lag = extend_lagrangian(xibar, xi0, a, c, b, ts)
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    stage = "abstract_system"
    try:
        S = AbstractSystem(a, b, lag.frames,
                           provenance=f"prescribed F={F.describe()}")
        idx = abstract_index(S, stride=max(grid_N // 512, 1))
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    stage = "realize_system"
    try:
        X = realize_system(S)
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    stage = "to_morse_sturm"
    try:
        # the transport-defect guard scales with the grid step: it measures
        # flow integration error, which a coarser grid legitimately raises
        ms, _ = to_morse_sturm(X, refine=16,
                               defect_tol=1e-8 * max(1.0, 4096.0 / grid_N))
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    report = None
    if with_report:
        stage = "detect"
        try:
            # detection runs on the realized system directly: its spline
            # coefficients are smooth at the grid scale (unlike the reduced
            # curvature, which develops sharp features between knots), so a
            # plain grid integration already resolves d(t).  The trace has
            # infinitely flat zeros on F (it is proportional to the
            # vanishing function there), so the relative threshold is wide
            # enough to catch the flat dip.
            fm = fundamental_matrix(X)
            report = conjugate_instants(
                X, zero_tol=DETECT_ZERO_TOL if zero_tol is None else zero_tol,
                fm=fm)
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc

    return PrescribedBundle(F=F, f=f, abstract=S, system=X, morse_sturm=ms,
                            report=report, extension=lag, index=idx)
