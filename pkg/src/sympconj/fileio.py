"""Flat-file I/O: system, report, and metric JSON plus the d(t) CSV trace.

Schemas (all JSON, deterministic key order, no timestamps):

system  {"n", "a", "b", "grid_N",
         "coeff": {"kind": "sampled", "samples": {"A", "B", "C"}}}
        Samples are nested lists at the N+1 grid nodes; analytic systems
        are serialized by sampling.

report  {"instants": [{"t", "multiplicity", "signature", "kind"}],
         "clusters": [[lo, hi]], "metadata": {...},
         "trace": {"a", "b", "N"}}
        The d(t) samples themselves live in the CSV trace.

metric  {"n", "g", "causal", "a", "b",
         "Rcurve": {"grid": [...], "samples": [...]},
         "sign_calibration": {"omega_sign", "dx_sign"}}

trace   CSV with header "t,d(t)", one row per grid node.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .geometry import ConformalMetric
from .sds import ConjugateInstant, ConjugateReport, SympDiffSystem

__all__ = [
    "save_system", "load_system",
    "save_report", "load_report",
    "save_metric", "load_metric",
    "save_trace", "load_trace",
]

METRIC_R_SAMPLES = 257


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# systems


def save_system(X: SympDiffSystem, path):
    ts = X.grid
    A = np.empty((ts.size, X.n, X.n))
    B = np.empty_like(A)
    C = np.empty_like(A)
    for k, t in enumerate(ts):
        A[k], B[k], C[k] = X.blocks_at(t)
    _dump({
        "n": X.n, "a": X.a, "b": X.b, "grid_N": X.grid_N,
        "coeff": {"kind": "sampled",
                  "samples": {"A": A.tolist(), "B": B.tolist(),
                              "C": C.tolist()}},
    }, path)


def load_system(path) -> SympDiffSystem:
    doc = _load(path)
    try:
        n = int(doc["n"])
        a, b = float(doc["a"]), float(doc["b"])
        coeff = doc["coeff"]
        kind = coeff["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed system file {path}: {exc}") from exc
    if kind != "sampled":
        raise ValueError(f"unsupported coeff kind {kind!r} in {path}")
    samples = coeff["samples"]
    A = np.asarray(samples["A"], dtype=float)
    B = np.asarray(samples["B"], dtype=float)
    C = np.asarray(samples["C"], dtype=float)
    if A.shape != B.shape or A.shape != C.shape or A.shape[1:] != (n, n):
        raise ValueError(f"inconsistent sample shapes in {path}")
    X = SympDiffSystem.from_samples(n, a, b, A, B, C, label=str(path))
    if "grid_N" in doc and int(doc["grid_N"]) != X.grid_N:
        raise ValueError(f"grid_N mismatch in {path}")
    return X


# ---------------------------------------------------------------------------
# reports


def save_report(report: ConjugateReport, path):
    _dump({
        "instants": [{"t": inst.t, "multiplicity": inst.multiplicity,
                      "signature": inst.signature, "kind": inst.kind}
                     for inst in report.instants],
        "clusters": [[lo, hi] for lo, hi in report.clusters],
        "metadata": report.metadata,
        "trace": {"a": float(report.ts[0]), "b": float(report.ts[-1]),
                  "N": int(report.ts.size - 1)},
    }, path)


def load_report(path) -> ConjugateReport:
    doc = _load(path)
    try:
        instants = [ConjugateInstant(float(i["t"]), int(i["multiplicity"]),
                                     i["signature"], i.get("kind", "sign-change"))
                    for i in doc["instants"]]
        clusters = [(float(lo), float(hi)) for lo, hi in doc["clusters"]]
        tr = doc["trace"]
        ts = np.linspace(float(tr["a"]), float(tr["b"]), int(tr["N"]) + 1)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed report file {path}: {exc}") from exc
    return ConjugateReport(instants=instants, clusters=clusters, ts=ts,
                           d_trace=np.array([]),
                           metadata=doc.get("metadata", {}))


# ---------------------------------------------------------------------------
# metrics


def save_metric(M: ConformalMetric, path, n_samples=METRIC_R_SAMPLES):
    grid = np.linspace(M.a, M.b, n_samples)
    samples = np.array([np.asarray(M.Rcurve(float(t)), dtype=float)
                        for t in grid])
    _dump({
        "n": M.n, "g": M.g.tolist(), "causal": M.causal,
        "a": M.a, "b": M.b,
        "Rcurve": {"grid": grid.tolist(), "samples": samples.tolist()},
        "sign_calibration": {"omega_sign": M.omega_sign,
                             "dx_sign": M.dx_sign},
    }, path)


def load_metric(path) -> ConformalMetric:
    from scipy.interpolate import CubicSpline

    doc = _load(path)
    try:
        g = np.asarray(doc["g"], dtype=float)
        grid = np.asarray(doc["Rcurve"]["grid"], dtype=float)
        samples = np.asarray(doc["Rcurve"]["samples"], dtype=float)
        causal = doc["causal"]
        a, b = float(doc["a"]), float(doc["b"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed metric file {path}: {exc}") from exc
    spl = CubicSpline(grid, samples, axis=0)
    return ConformalMetric(g, spl, causal, a, b)


# ---------------------------------------------------------------------------
# traces


def save_trace(report: ConjugateReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "d(t)"])
        for t, d in zip(report.ts, report.d_trace):
            w.writerow([repr(float(t)), repr(float(d))])


def load_trace(path):
    ts, ds = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["t", "d(t)"]:
            raise ValueError(f"unexpected trace header {header} in {path}")
        for row in r:
            ts.append(float(row[0]))
            ds.append(float(row[1]))
    return np.asarray(ts), np.asarray(ds)
