import numpy as np
import pytest

from conftest import random_n1_morse_sturm, random_n2_system
from sympconj.kernels import BACKEND, available_backends, propagate
from sympconj.sds import (
    ConjugateReport,
    IsoPair,
    MaslovUnavailableError,
    MorseSturm,
    SympDiffSystem,
    apply_isomorphism,
    conjugate_instants,
    crossing_data,
    flatten_B,
    fundamental_matrix,
    identity_iso,
    maslov_regular,
    to_morse_sturm,
)
from sympconj.symform import inertia
from sympconj.symplectic import canonical_J


def scalar_ms(Rval, a=0.0, b=3.5, grid_N=1024):
    def R(t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return np.array([[Rval]])
        return np.full((t.size, 1, 1), Rval)

    return MorseSturm(np.array([[1.0]]), R, a, b, grid_N=grid_N)


# ---------------------------------------------------------------------------
# fundamental matrix


def test_zero_system_gives_identity():
    X = SympDiffSystem.from_callable(
        1, 0.0, 1.0, lambda t: (np.zeros((1, 1)),) * 3, grid_N=64)
    fm = fundamental_matrix(X)
    assert np.max(np.abs(fm.Phi - np.eye(2))) < 1e-14


def test_flat_closed_form():
    fm = fundamental_matrix(scalar_ms(0.0, b=1.0).system)
    ts = fm.ts
    expect = np.tile(np.eye(2), (ts.size, 1, 1))
    expect[:, 0, 1] = ts
    assert np.max(np.abs(fm.Phi - expect)) < 1e-10


def test_oscillator_closed_form():
    fm = fundamental_matrix(scalar_ms(-1.0).system)
    ts = fm.ts
    expect = np.empty((ts.size, 2, 2))
    expect[:, 0, 0] = expect[:, 1, 1] = np.cos(ts)
    expect[:, 0, 1] = np.sin(ts)
    expect[:, 1, 0] = -np.sin(ts)
    assert np.max(np.abs(fm.Phi - expect)) < 1e-8


def test_drift_below_contract(rng):
    for _ in range(5):
        X = random_n2_system(rng)
        fm = fundamental_matrix(X)
        assert fm.max_drift <= 1e-8


def test_backends_agree(rng):
    X = random_n2_system(rng, grid_N=256)
    Xs, h = X.half_grid_X(), X.step
    J = canonical_J(X.n)
    results = {name: propagate(Xs, h, J=J, backend=name)[0]
               for name in available_backends()}
    if len(results) == 2:
        scale = np.max(np.abs(results["compiled"]))
        # the reprojection trigger may fire at different steps per backend,
        # so agreement is relative to the solution scale
        diff = np.max(np.abs(results["compiled"] - results["fallback"]))
        assert diff < 1e-10 * max(scale, 1.0)
    assert BACKEND in results


def test_solution_transport_residual(rng):
    # (v, alpha)(t) = Phi(t)(0, alpha0) solves the system to high accuracy
    from sympconj.numutil import central_derivative

    X = random_n2_system(rng, grid_N=2048, cscale=6.0)
    fm = fundamental_matrix(X)
    z0 = np.concatenate([np.zeros(2), rng.normal(size=2)])
    z = fm.Phi @ z0
    dz = central_derivative(z, X.step, order=4)
    worst = 0.0
    for k in range(1, X.grid_N):
        resid = dz[k] - X.X_at(X.grid[k]) @ z[k]
        worst = max(worst, np.max(np.abs(resid)) / max(1.0, np.max(np.abs(z[k]))))
    assert worst < 1e-7


# ---------------------------------------------------------------------------
# detection


def test_flat_no_instants_and_d_equals_t():
    X = scalar_ms(0.0).system
    fm = fundamental_matrix(X)
    rep = conjugate_instants(X, fm=fm)
    assert rep.instants == [] and rep.clusters == []
    assert np.max(np.abs(fm.d_values() - fm.ts)) < 1e-10


def test_oscillator_instant_at_pi():
    rep = conjugate_instants(scalar_ms(-1.0).system)
    assert len(rep.instants) == 1 and rep.clusters == []
    inst = rep.instants[0]
    assert inst.t == pytest.approx(np.pi, abs=1e-6)
    assert inst.multiplicity == 1


def test_trivial_left_endpoint_zero_is_excluded(rng):
    # d(a) = 0 for every system, but no instant may be reported near a
    for _ in range(5):
        X = random_n2_system(rng)
        fm = fundamental_matrix(X)
        assert abs(fm.d_values()[0]) < 1e-12
        rep = conjugate_instants(X, fm=fm)
        eps_a = rep.metadata["eps_a"]
        for inst in rep.instants:
            assert inst.t > X.a + eps_a


def test_n1_zeros_are_simple_sign_changes(rng):
    for _ in range(25):
        ms = random_n1_morse_sturm(rng)
        rep = conjugate_instants(ms.system)
        assert rep.clusters == []
        for inst in rep.instants:
            assert inst.multiplicity == 1
            assert inst.kind == "sign-change"


def test_instants_sorted_and_in_range(rng):
    for _ in range(5):
        ms = random_n1_morse_sturm(rng)
        rep = conjugate_instants(ms.system)
        ts = rep.instant_times()
        assert ts == sorted(ts)
        for t in ts:
            assert ms.a < t <= ms.b


# ---------------------------------------------------------------------------
# crossing data / Maslov


def test_oscillator_crossing_and_maslov():
    X = scalar_ms(-1.0).system
    mult, sig = crossing_data(X, np.pi)
    assert mult == 1 and abs(sig) == 1
    assert maslov_regular(X) == sig


def test_flat_maslov_zero():
    assert maslov_regular(scalar_ms(0.0).system) == 0


def test_crossing_data_rejects_nonconjugate():
    X = scalar_ms(-1.0).system
    with pytest.raises(ValueError):
        crossing_data(X, 1.0)
    with pytest.raises(ValueError):
        crossing_data(X, -0.5)


def test_maslov_unavailable_on_clusters():
    X = scalar_ms(-1.0).system
    rep = conjugate_instants(X)
    clustered = ConjugateReport(rep.instants, [(1.0, 1.5)], rep.ts,
                                rep.d_trace, rep.metadata)
    with pytest.raises(MaslovUnavailableError):
        maslov_regular(X, report=clustered)


# ---------------------------------------------------------------------------
# isomorphisms


def test_identity_iso_is_noop(rng):
    X = random_n2_system(rng, grid_N=256)
    Xt = apply_isomorphism(X, identity_iso(2))
    for t in np.linspace(X.a, X.b, 17):
        for M, Mt in zip(X.blocks_at(t), Xt.blocks_at(t)):
            assert np.allclose(M, Mt, atol=1e-12)


def smooth_random_iso(rng, n=2):
    from scipy.linalg import expm

    G = rng.normal(size=(n, n)) * 0.4
    W0 = rng.normal(size=(n, n))
    W0 = W0 + W0.T

    def Z(t):
        return expm(float(np.sin(t)) * G)

    def W(t):
        return float(np.cos(2 * t)) * W0

    return IsoPair(Z=Z, W=W, fd_step=1e-6)


def test_isomorphism_preserves_B_inertia(rng):
    X = random_n2_system(rng, grid_N=256)
    iso = smooth_random_iso(rng)
    Xt = apply_isomorphism(X, iso)
    for t in np.linspace(X.a, X.b, 9):
        assert inertia(X.blocks_at(t)[1]) == inertia(Xt.blocks_at(t)[1])


def test_isomorphism_preserves_instants(rng):
    found = 0
    for _ in range(6):
        X = random_n2_system(rng)
        iso = smooth_random_iso(rng)
        Xt = apply_isomorphism(X, iso)
        t0 = conjugate_instants(X).instant_times()
        t1 = conjugate_instants(Xt).instant_times()
        assert len(t0) == len(t1)
        found += len(t0)
        for u, v in zip(t0, t1):
            assert abs(u - v) < 1e-5
    assert found > 0


# ---------------------------------------------------------------------------
# reduction


def test_flatten_B_constant_is_identity(rng):
    X = random_n2_system(rng, grid_N=256)
    # rebuild with constant B
    ts = X.grid
    A = np.stack([X.blocks_at(t)[0] for t in ts])
    B = np.tile(np.diag([1.0, -1.0]), (ts.size, 1, 1))
    C = np.stack([X.blocks_at(t)[2] for t in ts])
    Xc = SympDiffSystem.from_samples(2, X.a, X.b, A, B, C)
    Xf, iso = flatten_B(Xc)
    for t in np.linspace(X.a, X.b, 9):
        assert np.allclose(iso.Z_at(t), np.eye(2), atol=1e-9)


def test_flatten_B_scalar_closed_form():
    # B(t) = (1 + t) Id: Z(t) = (1 + t)^(-1/2) Id, Z B Z^T = Id
    ts = np.linspace(0.0, 1.0, 513)
    A = np.zeros((ts.size, 1, 1))
    B = (1.0 + ts)[:, None, None] * np.ones((1, 1))
    C = np.zeros_like(A)
    X = SympDiffSystem.from_samples(1, 0.0, 1.0, A, B, C)
    Xf, iso = flatten_B(X)
    for t in np.linspace(0.0, 1.0, 11):
        Z = iso.Z_at(t)
        assert Z[0, 0] == pytest.approx((1.0 + t) ** -0.5, abs=1e-8)
        assert Z @ X.blocks_at(t)[1] @ Z.T == pytest.approx(1.0, abs=1e-8)


def test_flatten_B_random_defect(rng):
    for _ in range(10):
        X = random_n2_system(rng)
        Xf, iso = flatten_B(X)
        Ba = X.blocks_at(X.a)[1]
        for t in np.linspace(X.a, X.b, 17):
            Z = iso.Z_at(t)
            B = X.blocks_at(t)[1]
            assert np.max(np.abs(Z @ B @ Z.T - Ba)) < 1e-8


def test_to_morse_sturm_fixed_point():
    ms = scalar_ms(-1.0, grid_N=256)
    ms2, iso = to_morse_sturm(ms.system)
    assert np.allclose(ms2.g, ms.g, atol=1e-9)
    for t in np.linspace(0.0, 3.5, 9):
        assert np.allclose(iso.Z_at(t), np.eye(1), atol=1e-9)
        assert np.allclose(iso.W_at(t), 0.0, atol=1e-9)
        assert np.allclose(ms2.R_at(t), ms.R_at(t), atol=1e-8)


def test_to_morse_sturm_defects_and_instants(rng):
    for _ in range(5):
        X = random_n2_system(rng)
        ms, iso = to_morse_sturm(X)
        Bconst = np.linalg.inv(ms.g)
        for t in np.linspace(X.a, X.b, 9):
            Am, Bm, Cm = ms.system.blocks_at(t)
            assert np.max(np.abs(Am)) < 1e-8
            assert np.max(np.abs(Bm - Bconst)) < 1e-12
            Z = iso.Z_at(t)
            B = X.blocks_at(t)[1]
            assert np.max(np.abs(Z @ B @ Z.T - Bconst)) < 1e-8
            gR = ms.g @ ms.R_at(t)
            assert np.max(np.abs(gR - gR.T)) < 1e-9
        t0 = conjugate_instants(X).instant_times()
        t1 = conjugate_instants(ms.system).instant_times()
        assert len(t0) == len(t1)
        for u, v in zip(t0, t1):
            assert abs(u - v) < 1e-5


def test_to_morse_sturm_rejects_degenerate():
    ts = np.linspace(0.0, 1.0, 129)
    A = np.zeros((ts.size, 1, 1))
    B = (ts - 0.5)[:, None, None] * np.ones((1, 1))     # crosses zero
    C = np.zeros_like(A)
    X = SympDiffSystem.from_samples(1, 0.0, 1.0, A, B, C)
    with pytest.raises((ValueError, RuntimeError)):
        to_morse_sturm(X)
