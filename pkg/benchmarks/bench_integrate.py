"""Benchmark the fundamental-matrix inner loop: compiled core vs fallback.

The hot path is the sequential cumulative product Phi_{k+1} = S_k Phi_k
with symplectic drift monitoring.  Step-matrix assembly is batched numpy
either way, so the comparison isolates the accumulation kernel.

Usage: python benchmarks/bench_integrate.py [--grid N] [--n DIM] [--reps R]
"""

import argparse
import time

import numpy as np

from sympconj.kernels import (
    BACKEND,
    available_backends,
    propagate,
    rk4_step_matrices,
)
from sympconj.symplectic import canonical_J


def make_coefficients(n, grid_N, rng):
    """A smooth random curve in sp(2n, R) at half-step resolution."""
    ts = np.linspace(0.0, 1.0, 2 * grid_N + 1)
    A = rng.normal(size=(n, n, 3))
    B = rng.normal(size=(n, n, 3))
    C = rng.normal(size=(n, n, 3))
    X = np.zeros((ts.size, 2 * n, 2 * n))
    waves = np.stack([np.cos(np.pi * ts), np.sin(2 * np.pi * ts),
                      np.cos(3 * np.pi * ts)], axis=-1)
    Ab = np.einsum("ijk,tk->tij", A, waves)
    Bb = np.einsum("ijk,tk->tij", B, waves)
    Bb = 0.5 * (Bb + np.swapaxes(Bb, 1, 2)) + 2.0 * np.eye(n)
    Cb = np.einsum("ijk,tk->tij", C, waves)
    Cb = 0.5 * (Cb + np.swapaxes(Cb, 1, 2))
    X[:, :n, :n] = Ab
    X[:, :n, n:] = Bb
    X[:, n:, :n] = Cb
    X[:, n:, n:] = -np.swapaxes(Ab, 1, 2)
    return X


def bench(backend, X_half, h, J, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        Phi, drift = propagate(X_half, h, J=J, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, Phi, drift


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=4096)
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    X_half = make_coefficients(args.n, args.grid, rng)
    h = 1.0 / args.grid
    J = canonical_J(args.n)

    print(f"grid {args.grid}, n = {args.n}, default backend: {BACKEND}")
    t_assemble = np.inf
    for _ in range(args.reps):
        t0 = time.perf_counter()
        rk4_step_matrices(X_half, h)
        t_assemble = min(t_assemble, time.perf_counter() - t0)
    print(f"  step assembly (shared):   {1e3 * t_assemble:8.2f} ms")

    results = {}
    for name in available_backends():
        t, Phi, drift = bench(name, X_half, h, J, args.reps)
        results[name] = (t, Phi, drift)
        print(f"  {name:10s} accumulate+steps: {1e3 * t:8.2f} ms  "
              f"(drift {drift:.2e})")

    if len(results) == 2:
        t_f = results["fallback"][0]
        t_c = results["compiled"][0]
        diff = np.max(np.abs(results["fallback"][1] - results["compiled"][1]))
        print(f"  speedup compiled vs fallback: {t_f / t_c:.2f}x  "
              f"(max |Phi| disagreement {diff:.2e})")


if __name__ == "__main__":
    main()
