"""End-to-end acceptance checks, one test per contract criterion.

Each test name states the criterion; the `-v` run therefore prints one
pass/fail line per criterion.  The three prescribed-set pipeline builds
are computed once per session (see conftest.pipeline_bundles).
"""

import time

import numpy as np
import pytest

from conftest import PRESCRIBED_FIXTURES, SEED, random_n1_morse_sturm, random_n2_system
from sympconj.abstract import pushforward, xi_derivative_form, xi_from_system
from sympconj.geometry import metric_from_morse_sturm, verify_geometry
from sympconj.numutil import central_derivative
from sympconj.prescribe import (
    ClosedSetDescriptor,
    SmoothScalarCurve,
    agreement_in_steps,
    rho_curve,
    rho_prime,
    vanishing_function,
)
from sympconj.sds import (
    DEFAULT_ZERO_TOL,
    MorseSturm,
    conjugate_instants,
    fundamental_matrix,
    to_morse_sturm,
)
from sympconj.symplectic import canonical_J


def scalar_ms(Rval, a=0.0, b=3.5, grid_N=4096):
    def R(t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return np.array([[Rval]])
        return np.full((t.size, 1, 1), Rval)

    return MorseSturm(np.array([[1.0]]), R, a, b, grid_N=grid_N)


# ---------------------------------------------------------------------------
# 1. oscillator oracle


def test_criterion_1_oscillator_instant_at_pi_within_1e6_under_1s():
    t0 = time.perf_counter()
    rep = conjugate_instants(scalar_ms(-1.0).system)
    elapsed = time.perf_counter() - t0
    assert len(rep.instants) == 1 and rep.clusters == []
    assert rep.instants[0].t == pytest.approx(np.pi, abs=1e-6)
    assert rep.instants[0].multiplicity == 1
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2. flat oracle


def test_criterion_2_flat_system_empty_report_and_d_equals_t_to_1e10():
    X = scalar_ms(0.0).system
    fm = fundamental_matrix(X)
    rep = conjugate_instants(X, fm=fm)
    assert rep.instants == [] and rep.clusters == []
    assert np.max(np.abs(fm.d_values() - fm.ts)) < 1e-10


# ---------------------------------------------------------------------------
# 3. end-to-end prescription


def test_criterion_3_prescribed_sets_within_2_grid_steps_index_1_under_10s(
        pipeline_bundles):
    for name, (F, bundle, seconds) in pipeline_bundles.items():
        worst = agreement_in_steps(F, bundle.report)
        assert worst <= 2.0, f"{name}: {worst:.2f} grid steps"
        assert bundle.index == (True, 1), f"{name}: index {bundle.index}"
        assert seconds < 10.0, f"{name}: {seconds:.1f} s"


# ---------------------------------------------------------------------------
# 4. rho identities


def test_criterion_4_rho_determinant_identities_to_1e12(pipeline_bundles):
    for name, (F, bundle, _) in pipeline_bundles.items():
        f = bundle.f
        R = SmoothScalarCurve(value=lambda t, f=f: 1.0 - f.value(t),
                              deriv=lambda t, f=f: -f.deriv(t),
                              domain=f.domain)
        lo, hi = f.domain
        for t in np.linspace(lo, hi, 513):
            Rv, Rp = R.value(t), R.deriv(t)
            det_rho = np.linalg.det(rho_curve(R, t).entries)
            det_rho_p = np.linalg.det(rho_prime(R, t).entries)
            assert abs(det_rho - (1.0 - Rv ** 2)) < 1e-12, name
            assert abs(det_rho_p + (Rv ** 2 + Rp ** 2)) < 1e-12, name


# ---------------------------------------------------------------------------
# 5. isomorphism invariance under reduction


def test_criterion_5_50_random_n2_reductions_preserve_instants_and_residuals():
    rng = np.random.default_rng(SEED + 5)
    checked_instants = 0
    for _ in range(50):
        # cscale keeps the stiffest draws within the integrator's drift
        # ceiling at this grid while still producing conjugate instants
        X = random_n2_system(rng, grid_N=2048, cscale=30.0)
        ms, iso = to_morse_sturm(X)
        Bconst = np.linalg.inv(ms.g)
        for t in np.linspace(X.a, X.b, 9):
            At, Bt, _ = ms.system.blocks_at(t)
            assert np.max(np.abs(At)) <= 1e-8
            Z = iso.Z_at(t)
            B = X.blocks_at(t)[1]
            assert np.max(np.abs(Z @ B @ Z.T - Bconst)) <= 1e-8
        t0 = conjugate_instants(X).instant_times()
        t1 = conjugate_instants(ms.system).instant_times()
        assert len(t0) == len(t1)
        for u, v in zip(t0, t1):
            assert abs(u - v) <= 1e-5
        checked_instants += len(t0)
    assert checked_instants > 0


# ---------------------------------------------------------------------------
# 6. push-forward law


def test_criterion_6_xi_derivative_is_pushforward_of_minus_B(pipeline_bundles):
    from sympconj.sds import SympDiffSystem

    # the check runs at every interior node of the contract grid; the
    # Grassmannian curve itself is evaluated on a 16x refinement because
    # near the prescribed instants it turns fast enough that the stencil
    # needs the extra resolution to reach the 1e-6 budget
    ref = 16
    for name, (F, bundle, _) in pipeline_bundles.items():
        X = bundle.system
        th = np.linspace(X.a, X.b, ref * X.grid_N + 1)
        A, B, C = X.coeff.eval_batch(th)
        Xr = SympDiffSystem.from_samples(X.n, X.a, X.b, A, B, C)
        fm = fundamental_matrix(Xr)
        S = xi_from_system(Xr, fm)
        n = X.n
        J = canonical_J(n)
        L0 = np.vstack([np.zeros((n, n)), np.eye(n)])
        Phi_inv = -J @ np.swapaxes(fm.Phi, 1, 2) @ J
        worst = 0.0
        for k in range(1, X.grid_N):
            t = X.grid[k]
            Bt = X.blocks_at(t)[1]
            xp = xi_derivative_form(S, t).entries
            pf = pushforward(-Bt, Phi_inv[ref * k], L0,
                             S.frames[ref * k]).entries
            gap = np.max(np.abs(xp - pf)) / (1.0 + np.max(np.abs(Bt)))
            worst = max(worst, float(gap))
        assert worst <= 1e-6, f"{name}: {worst:.2e}"


# ---------------------------------------------------------------------------
# 7. symplectic drift


def test_criterion_7_fundamental_matrix_drift_below_1e8(pipeline_bundles):
    for name, (F, bundle, _) in pipeline_bundles.items():
        fm = fundamental_matrix(bundle.system)
        assert fm.max_drift <= 1e-8, f"{name}: drift {fm.max_drift:.2e}"


# ---------------------------------------------------------------------------
# 8. geometry round trip


def test_criterion_8_geometry_roundtrip_on_pipeline_systems(pipeline_bundles,
                                                            tmp_path):
    from sympconj.fileio import load_metric, save_metric

    # the round trip runs on the emitted metric artifact (spline-sampled
    # curvature), the object a downstream consumer actually receives; the
    # in-memory reduced curvature is exact-on-demand with structure between
    # its own grid nodes, which no fixed-order stencil shows clean order on
    for name, (F, bundle, _) in pipeline_bundles.items():
        path = tmp_path / f"{name}.json"
        save_metric(metric_from_morse_sturm(bundle.morse_sturm), path)
        M = load_metric(path)
        for causal, want_index in (("spacelike", 1), ("timelike", 2)):
            ms = MorseSturm(M.g, M.Rcurve, M.a, M.b)
            rep = verify_geometry(ms, causal, h=1e-3)
            assert rep.max_christoffel_on_axis <= 1e-4, (name, causal)
            assert rep.convergence_order >= 1.9, (name, causal)
            assert rep.curvature_mismatch <= 1e-3, (name, causal)
            assert rep.index_of_metric == want_index, (name, causal)


# ---------------------------------------------------------------------------
# 9. n=1 isolation


def test_criterion_9_50_random_n1_systems_have_only_simple_sign_changes():
    rng = np.random.default_rng(SEED + 9)
    found = 0
    for _ in range(50):
        ms = random_n1_morse_sturm(rng)
        rep = conjugate_instants(ms.system)
        assert rep.clusters == []
        for inst in rep.instants:
            assert inst.multiplicity == 1
            assert inst.kind == "sign-change"
        found += len(rep.instants)
    assert found > 0


# ---------------------------------------------------------------------------
# 10. vanishing-function properties


def test_criterion_10_f_vanishes_on_F_separated_off_F_derivatives_bounded():
    for name, (text, a, b) in PRESCRIBED_FIXTURES.items():
        F = ClosedSetDescriptor.parse(text, a, b)
        f = vanishing_function(F)
        N = 4096
        h = (b - a) / N
        ts = np.linspace(a, b, N + 1)
        vals = f(ts)
        # exact vanishing on F (grid nodes inside F, plus dense off-grid
        # samples of every interval; a point fixture may miss all nodes)
        on_F = np.array([F.distance(t) == 0.0 for t in ts])
        if np.any(on_F):
            assert np.max(np.abs(vals[on_F])) < 1e-12, name
        for lo, hi in F.intervals:
            for t in np.linspace(lo, hi, 101):
                assert abs(f.value(t)) < 1e-12, name
        # separation: f >= 10 * detector zero tolerance ten steps away
        far = np.array([F.distance(t) >= 10.0 * h for t in ts])
        assert np.min(vals[far]) >= 10.0 * DEFAULT_ZERO_TOL, name
        # finite-difference derivatives up to order 3 within the documented
        # per-scale budget 2^-r (K/scale)^i, K = 20, shortest scale
        # 0.05 (b - a); factor 8 covers product-piece cross terms
        d = vals
        for order in (1, 2, 3):
            d = central_derivative(d, h, order=4)
            assert np.all(np.isfinite(d)), name
            budget = 8.0 * (20.0 / (0.05 * (b - a))) ** order
            assert np.max(np.abs(d)) < budget, name
