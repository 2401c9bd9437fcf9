import numpy as np
import pytest

from conftest import random_n1_morse_sturm, random_n2_system
from sympconj.abstract import (
    AbstractSystem,
    abstract_index,
    abstract_instants,
    pushforward,
    realize_system,
    xi_derivative_form,
    xi_from_system,
)
from sympconj.sds import (
    MorseSturm,
    SympDiffSystem,
    conjugate_instants,
    fundamental_matrix,
)
from sympconj.symform import inertia
from sympconj.symplectic import (
    LagrangianFrame,
    canonical_J,
    intersection_dim,
    is_symplectic,
)


def oscillator(grid_N=1024, b=3.5):
    def R(t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return np.array([[-1.0]])
        return np.full((t.size, 1, 1), -1.0)

    return MorseSturm(np.array([[1.0]]), R, 0.0, b, grid_N=grid_N).system


def test_zero_system_has_constant_xi():
    X = SympDiffSystem.from_callable(
        1, 0.0, 1.0, lambda t: (np.zeros((1, 1)),) * 3, grid_N=64)
    S = xi_from_system(X)
    L0 = LagrangianFrame.L0(1).columns
    for F in S.frames[::8]:
        assert intersection_dim(F, L0) == 1


def test_xi_starts_at_L0(rng):
    X = random_n2_system(rng, grid_N=256)
    S = xi_from_system(X)
    assert intersection_dim(S.frames[0], LagrangianFrame.L0(2).columns) == 2


def test_conjugate_instants_match_intersections():
    X = oscillator()
    S = xi_from_system(X)
    times, dims = abstract_instants(S)
    rep = conjugate_instants(X)
    assert len(times) == len(rep.instants) == 1
    assert abs(times[0] - rep.instants[0].t) <= 2.0 * X.step
    assert dims[0] == rep.instants[0].multiplicity


def test_xi_derivative_zero_for_flat_curve():
    X = SympDiffSystem.from_callable(
        1, 0.0, 1.0, lambda t: (np.zeros((1, 1)),) * 3, grid_N=64)
    S = xi_from_system(X)
    D = xi_derivative_form(S, 0.5)
    assert np.max(np.abs(D.entries)) < 1e-10


def test_xi_derivative_complement_independent(rng):
    X = random_n2_system(rng, grid_N=2048, cscale=6.0)
    S = xi_from_system(X)
    J = canonical_J(2)
    for t in np.linspace(0.2, 0.8, 5):
        k = S.node_index(t)
        base = xi_derivative_form(S, t).entries
        # a different transverse complement: rotate J F slightly within the
        # transversality margin
        F = S.frames[k]
        alt = J @ F + 0.15 * F
        other = xi_derivative_form(S, t, complement=alt).entries
        assert np.max(np.abs(base - other)) < 1e-6


def test_pushforward_identity_maps(rng):
    # M = Id: pushforward only rewrites the basis
    S = rng.normal(size=(2, 2))
    S = S + S.T
    F = np.vstack([np.eye(2), np.zeros((2, 2))])
    out = pushforward(S, np.eye(4), F, F)
    assert np.allclose(out.entries, S, atol=1e-12)
    out2 = pushforward(S, np.eye(4), F, F @ np.diag([2.0, 1.0]))
    D = np.diag([2.0, 1.0])
    assert np.allclose(out2.entries, D.T @ S @ D, atol=1e-12)


def test_pushforward_law_oscillator():
    X = oscillator(grid_N=4096)
    fm = fundamental_matrix(X)
    S = xi_from_system(X, fm)
    J = canonical_J(1)
    L0 = LagrangianFrame.L0(1).columns
    for k in range(1, X.grid_N, 37):
        t = X.grid[k]
        B = X.blocks_at(t)[1]
        Phi_inv = -J @ fm.Phi[k].T @ J
        xp = xi_derivative_form(S, t).entries
        pf = pushforward(-B, Phi_inv, L0, S.frames[k]).entries
        assert np.max(np.abs(xp - pf)) <= 1e-6 * (1.0 + np.max(np.abs(B)))


def test_abstract_index_oscillator():
    S = xi_from_system(oscillator())
    nondeg, idx = abstract_index(S, stride=8)
    assert nondeg and idx == 0


def test_abstract_index_degenerate_for_zero_system():
    X = SympDiffSystem.from_callable(
        1, 0.0, 1.0, lambda t: (np.zeros((1, 1)),) * 3, grid_N=64)
    S = xi_from_system(X)
    nondeg, idx = abstract_index(S)
    assert not nondeg and idx == 0


def test_abstract_index_matches_B_inertia(rng):
    # for a symplectic system, -xi' pushes forward B; index = n_minus of -B
    X = random_n2_system(rng, force_inertia=(1.0, -1.0))
    S = xi_from_system(X)
    nondeg, idx = abstract_index(S, stride=32)
    assert nondeg
    assert idx == inertia(-X.blocks_at(0.5)[1])[1]


def test_psi_frames_symplectic_and_aligned(rng):
    X = random_n2_system(rng, grid_N=512, cscale=6.0)
    S = xi_from_system(X)
    J = canonical_J(2)
    for k in range(0, S.grid_N + 1, 64):
        F = S.frames[k]
        psi = np.hstack([J @ F, F]).T
        ok, drift = is_symplectic(psi, tol=1e-8)
        assert ok
        # psi maps xi(t) to L0
        img = psi @ F
        assert np.max(np.abs(img[:2])) < 1e-8


def test_realization_roundtrip_instants(rng):
    for _ in range(3):
        ms = random_n1_morse_sturm(rng, grid_N=1024)
        X = ms.system
        S = xi_from_system(X)
        X2 = realize_system(S)
        t0 = conjugate_instants(X).instant_times()
        t1 = conjugate_instants(X2).instant_times()
        assert len(t0) == len(t1)
        for u, v in zip(t0, t1):
            assert abs(u - v) < 1e-4


def test_transformed_curve_same_instants(rng):
    from scipy.linalg import expm

    from sympconj.symplectic import assemble_sp

    X = oscillator(grid_N=1024)
    S = xi_from_system(X)
    G = rng.normal(size=(1, 1)) * 0.5
    M = expm(assemble_sp(G, G + G.T, G + G.T))
    S2 = S.transformed(M)
    t1, _ = abstract_instants(S)
    # instants of the transformed curve: xi2 meets xi2(a) = M xi(a)
    tops = np.einsum("kij,jl->kil", S2.frames, np.eye(1))
    # scan intersections with the transformed start frame
    start = S2.frames[0]
    times = []
    for k in range(1, S2.grid_N + 1):
        if intersection_dim(S2.frames[k], start, rank_tol=5.0 * S2.step) >= 1:
            times.append(S2.grid[k])
    for t in t1:
        assert any(abs(t - u) <= 3.0 * S2.step for u in times)


def test_realize_rejects_coarse_curves(rng):
    # a violently oscillating curve on a tiny grid must be refused rather
    # than silently realized
    from sympconj.abstract import FrameAlignmentError

    ts = np.linspace(0.0, 1.0, 17)
    frames = np.zeros((17, 2, 1))
    for k, t in enumerate(ts):
        th = 40.0 * t
        frames[k] = np.array([[np.sin(th)], [np.cos(th)]])
    S = AbstractSystem(0.0, 1.0, frames)
    with pytest.raises((FrameAlignmentError, ValueError)):
        realize_system(S)
