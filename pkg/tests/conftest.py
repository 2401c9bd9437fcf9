"""Shared fixtures: seeded RNG, random system generators, pipeline cache."""

import time

import numpy as np
import pytest

from sympconj.prescribe import ClosedSetDescriptor, build_prescribed
from sympconj.sds import MorseSturm, SympDiffSystem

SEED = 20260823

# the three prescribed-set fixtures of the end-to-end theorem check
PRESCRIBED_FIXTURES = {
    "point": ("3.141592653589793", 0.0, 4.0),
    "mix": ("1.0;1.5:2.0", 0.0, 2.5),
    "cantor": ("0.3:0.3667;0.4333:0.5;0.7:0.9", 0.0, 1.0),
}


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


def _trig_curve(rng, scale=1.0, K=3):
    """A random smooth scalar curve: low-order trigonometric polynomial."""
    c = rng.normal(size=(K, 2)) * scale / np.arange(1, K + 1)[:, None]

    def ev(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for k in range(K):
            out += (c[k, 0] * np.cos((k + 1) * np.pi * t)
                    + c[k, 1] * np.sin((k + 1) * np.pi * t))
        return out

    return ev


def random_n2_system(rng, a=0.0, b=1.0, grid_N=1024, cscale=60.0,
                     force_inertia=None):
    """A random smooth nondegenerate n=2 system with constant B-inertia.

    B(t) = L(t) E L(t)^T with L lower triangular of positive diagonal and
    E = diag(1, 1) or diag(1, -1), so nondegeneracy holds by construction;
    A(t) full random, C(t) symmetric random (scaled up so conjugate
    instants actually occur).
    """
    ts = np.linspace(a, b, grid_N + 1)
    if force_inertia is None:
        E = np.diag([1.0, 1.0] if rng.random() < 0.5 else [1.0, -1.0])
    else:
        E = np.diag(force_inertia).astype(float)
    l11, l21, l22 = (_trig_curve(rng, 0.3) for _ in range(3))
    fa = [_trig_curve(rng, 0.5) for _ in range(4)]
    fc = [_trig_curve(rng, cscale) for _ in range(3)]
    m = ts.size
    L = np.zeros((m, 2, 2))
    L[:, 0, 0] = 1.0 + 0.5 * np.tanh(l11(ts))
    L[:, 1, 0] = l21(ts)
    L[:, 1, 1] = 1.0 + 0.5 * np.tanh(l22(ts))
    B = L @ E @ np.swapaxes(L, 1, 2)
    A = np.zeros((m, 2, 2))
    A[:, 0, 0] = fa[0](ts)
    A[:, 0, 1] = fa[1](ts)
    A[:, 1, 0] = fa[2](ts)
    A[:, 1, 1] = fa[3](ts)
    C = np.zeros((m, 2, 2))
    C[:, 0, 0] = fc[0](ts)
    C[:, 1, 1] = fc[2](ts)
    C[:, 0, 1] = C[:, 1, 0] = fc[1](ts)
    return SympDiffSystem.from_samples(2, a, b, A, B, C, label="random-n2")


def random_n1_morse_sturm(rng, a=0.0, b=2.0, grid_N=2048):
    """A random n=1 Morse-Sturm system with mixed-sign curvature."""
    c = rng.normal(size=4) * np.array([8.0, 4.0, 2.0, 1.0])

    def R(t):
        t = np.asarray(t, dtype=float)
        v = (-(c[0] ** 2) * 0.15 - c[1] * np.cos(2 * np.pi * t)
             - c[2] * np.sin(3 * np.pi * t) - c[3])
        if v.ndim == 0:
            return np.array([[float(v)]])
        return v[:, None, None]

    return MorseSturm(np.array([[1.0]]), R, a, b, grid_N=grid_N)


@pytest.fixture(scope="session")
def pipeline_bundles():
    """The three end-to-end pipeline builds, computed once per session.

    Maps fixture name to (descriptor, bundle, wall_seconds); the timing
    covers the complete construction including detection.
    """
    out = {}
    for name, (text, a, b) in PRESCRIBED_FIXTURES.items():
        F = ClosedSetDescriptor.parse(text, a, b)
        t0 = time.perf_counter()
        bundle = build_prescribed(F, grid_N=4096)
        out[name] = (F, bundle, time.perf_counter() - t0)
    return out
