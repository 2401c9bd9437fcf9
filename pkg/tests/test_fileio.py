import json

import numpy as np
import pytest

from conftest import random_n1_morse_sturm, random_n2_system
from sympconj.fileio import (
    load_metric,
    load_report,
    load_system,
    load_trace,
    save_metric,
    save_report,
    save_system,
    save_trace,
)
from sympconj.geometry import metric_from_morse_sturm
from sympconj.sds import conjugate_instants, fundamental_matrix


# ---------------------------------------------------------------------------
# systems


def test_system_roundtrip_exact(rng, tmp_path):
    X = random_n2_system(rng, grid_N=128)
    p = tmp_path / "system.json"
    save_system(X, p)
    X2 = load_system(p)
    assert (X2.n, X2.a, X2.b, X2.grid_N) == (X.n, X.a, X.b, X.grid_N)
    for t in X.grid[::16]:
        for M, M2 in zip(X.blocks_at(t), X2.blocks_at(t)):
            assert np.array_equal(M, M2)


def test_system_save_deterministic(rng, tmp_path):
    X = random_n2_system(rng, grid_N=64)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_system(X, p1)
    save_system(X, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_system_rejects_malformed(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"n": 1, "a": 0.0}))
    with pytest.raises(ValueError):
        load_system(p)
    p.write_text(json.dumps({
        "n": 2, "a": 0.0, "b": 1.0, "grid_N": 1,
        "coeff": {"kind": "sampled",
                  "samples": {"A": [[[0.0]]], "B": [[[0.0]]],
                              "C": [[[0.0]]]}}}))
    with pytest.raises(ValueError):
        load_system(p)          # n = 2 but 1x1 samples


def test_system_rejects_unknown_kind(tmp_path):
    p = tmp_path / "kind.json"
    p.write_text(json.dumps({
        "n": 1, "a": 0.0, "b": 1.0,
        "coeff": {"kind": "analytic", "samples": {}}}))
    with pytest.raises(ValueError):
        load_system(p)


# ---------------------------------------------------------------------------
# reports


def test_report_roundtrip(rng, tmp_path):
    ms = random_n1_morse_sturm(rng, grid_N=512)
    rep = conjugate_instants(ms.system)
    p = tmp_path / "report.json"
    save_report(rep, p)
    rep2 = load_report(p)
    assert len(rep2.instants) == len(rep.instants)
    for i, j in zip(rep.instants, rep2.instants):
        assert (i.t, i.multiplicity, i.signature, i.kind) == \
               (j.t, j.multiplicity, j.signature, j.kind)
    assert rep2.clusters == rep.clusters
    assert np.array_equal(rep2.ts, rep.ts)
    assert rep2.metadata == rep.metadata


def test_report_rejects_malformed(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"instants": [{"t": "x"}]}))
    with pytest.raises(ValueError):
        load_report(p)


# ---------------------------------------------------------------------------
# metrics


def test_metric_roundtrip(rng, tmp_path):
    ms = random_n1_morse_sturm(rng)
    M = metric_from_morse_sturm(ms, "timelike")
    p = tmp_path / "metric.json"
    save_metric(M, p)
    M2 = load_metric(p)
    assert np.array_equal(M2.g, M.g)
    assert (M2.causal, M2.a, M2.b) == (M.causal, M.a, M.b)
    # resampled curvature agrees with the original curve off the knots
    for t in np.linspace(ms.a, ms.b, 23):
        assert np.max(np.abs(np.asarray(M2.Rcurve(t)) - ms.R_at(t))) < 1e-6


def test_metric_rejects_malformed(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"g": [[1.0]], "causal": "spacelike"}))
    with pytest.raises(ValueError):
        load_metric(p)


# ---------------------------------------------------------------------------
# traces


def test_trace_roundtrip_exact(rng, tmp_path):
    X = random_n2_system(rng, grid_N=128)
    fm = fundamental_matrix(X)
    rep = conjugate_instants(X, fm=fm)
    p = tmp_path / "trace.csv"
    save_trace(rep, p)
    ts, ds = load_trace(p)
    # repr round trip is bit exact
    assert np.array_equal(ts, rep.ts)
    assert np.array_equal(ds, rep.d_trace)


def test_trace_header_checked(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,det\n0.0,0.0\n")
    with pytest.raises(ValueError):
        load_trace(p)
