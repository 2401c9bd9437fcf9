"""Command-line front door.

Commands
  prescribe        build the full pipeline for a prescribed set and verify
  detect           run the conjugate-instant detector on a system file
  reduce           reduce a system file to Morse-Sturm form
  metric           emit the conformally flat metric of a Morse-Sturm file
  verify-geometry  geometry round-trip checks on a metric file
  trace            write the d(t) CSV trace of a system file

Exit codes: 0 success / verification passed; 1 verification failed;
2 bad input (parse or file errors); 3 pipeline or integrator failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fileio
from .geometry import metric_from_morse_sturm, verify_geometry
from .kernels import DriftCeilingError
from .prescribe import (
    ClosedSetDescriptor,
    StageError,
    agreement_in_steps,
    build_prescribed,
)
from .sds import MorseSturm, conjugate_instants, to_morse_sturm

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_PIPELINE = 3

AGREEMENT_STEPS = 2.0
GEOMETRY_LIMITS = {"christoffel": 1e-4, "order": 1.9, "mismatch": 1e-3}


def _parser():
    p = argparse.ArgumentParser(
        prog="sympconj",
        description="prescribed conjugate instants for symplectic systems")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        if "interval" in flags:
            sp.add_argument("--interval", nargs=2, type=float,
                            default=(0.0, 1.0), metavar=("A", "B"))
        if "set" in flags:
            sp.add_argument("--set", dest="set_descriptor", default="",
                            help='closed set, e.g. "1.0;1.5:2.0" (empty ok)')
        if "grid" in flags:
            sp.add_argument("--grid", type=int, default=4096)
        if "in" in flags:
            sp.add_argument("--in", dest="infile", required=True)
        if "out" in flags:
            sp.add_argument("--out", required=True)
        sp.add_argument("--tol-zero", type=float, default=None)
        sp.add_argument("--rank-tol", type=float, default=None)
        sp.add_argument("--t-tol", type=float, default=None)
        sp.add_argument("--causal", choices=("spacelike", "timelike"),
                        default="spacelike")
        sp.add_argument("--fd-step", type=float, default=1e-3)

    common(sub.add_parser("prescribe", help="pipeline + verification"),
           "interval", "set", "grid", "out")
    common(sub.add_parser("detect", help="detector on a system file"),
           "in", "out")
    common(sub.add_parser("reduce", help="reduce to Morse-Sturm"),
           "in", "out")
    common(sub.add_parser("metric", help="emit conformal metric"),
           "in", "out")
    common(sub.add_parser("verify-geometry", help="geometry round trip"),
           "in")
    common(sub.add_parser("trace", help="d(t) CSV trace"), "in", "out")
    return p


def _detector_opts(args):
    opts = {}
    if args.tol_zero is not None:
        opts["zero_tol"] = args.tol_zero
    if args.rank_tol is not None:
        opts["rank_tol"] = args.rank_tol
    if args.t_tol is not None:
        opts["t_tol"] = args.t_tol
    return opts


def _load_morse_sturm(path):
    """A system file interpreted as Morse-Sturm (reduced if necessary)."""
    X = fileio.load_system(path)
    ts = X.grid[:: max(X.grid_N // 64, 1)]
    A0 = max(float(np.max(np.abs(X.blocks_at(t)[0]))) for t in ts)
    Bvar = max(float(np.max(np.abs(X.blocks_at(t)[1]
                                   - X.blocks_at(X.a)[1]))) for t in ts)
    if A0 < 1e-12 and Bvar < 1e-12:
        B = X.blocks_at(X.a)[1]
        g = np.linalg.inv(B)
        return MorseSturm(g, lambda t, X=X, g=g: np.linalg.solve(
            g, X.blocks_at(float(t))[2]), X.a, X.b, grid_N=X.grid_N)
    ms, _ = to_morse_sturm(X)
    return ms


def cmd_prescribe(args):
    try:
        a, b = args.interval
        F = ClosedSetDescriptor.parse(args.set_descriptor, a, b)
        if not F.empty and F.inf <= a:
            raise ValueError("inf F must exceed a")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        bundle = build_prescribed(F, grid_N=args.grid,
                                  zero_tol=args.tol_zero)
    except StageError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE

    os.makedirs(args.out, exist_ok=True)
    # the realized system is stored: it is defined by its grid samples, so
    # the file round-trips exactly and a later `detect` run reproduces the
    # embedded report (the reduced system's curvature has features between
    # grid nodes that node sampling cannot capture)
    fileio.save_system(bundle.system, os.path.join(args.out, "system.json"))
    fileio.save_metric(metric_from_morse_sturm(bundle.morse_sturm,
                                               args.causal),
                       os.path.join(args.out, "metric.json"))
    report = bundle.report
    report.metadata["prescribed_set"] = F.describe()
    report.metadata["abstract_index"] = list(bundle.index)
    fileio.save_report(report, os.path.join(args.out, "report.json"))
    fileio.save_trace(report, os.path.join(args.out, "trace.csv"))

    worst = agreement_in_steps(F, report)
    ok = worst <= AGREEMENT_STEPS
    print(f"prescribed set: {F.describe() or '(empty)'}")
    print(f"instants: {[round(i.t, 6) for i in report.instants]}")
    print(f"clusters: {[(round(lo, 6), round(hi, 6)) for lo, hi in report.clusters]}")
    print(f"agreement: {worst:.2f} grid steps "
          f"({'PASS' if ok else 'FAIL'}, limit {AGREEMENT_STEPS:g})")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_detect(args):
    try:
        X = fileio.load_system(args.infile)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        report = conjugate_instants(X, **_detector_opts(args))
    except DriftCeilingError as exc:
        print(f"integrator failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    fileio.save_report(report, args.out)
    print(f"instants: {[round(i.t, 6) for i in report.instants]}")
    print(f"clusters: {[(round(lo, 6), round(hi, 6)) for lo, hi in report.clusters]}")
    return EXIT_OK


def cmd_reduce(args):
    try:
        X = fileio.load_system(args.infile)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        ms, _ = to_morse_sturm(X)
    except (RuntimeError, ValueError, DriftCeilingError) as exc:
        print(f"reduction failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    fileio.save_system(ms.system, args.out)
    print(f"reduced system written to {args.out}")
    return EXIT_OK


def cmd_metric(args):
    try:
        ms = _load_morse_sturm(args.infile)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, DriftCeilingError) as exc:
        print(f"reduction failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    fileio.save_metric(metric_from_morse_sturm(ms, args.causal), args.out)
    print(f"metric written to {args.out}")
    return EXIT_OK


def cmd_verify_geometry(args):
    try:
        M = fileio.load_metric(args.infile)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    ms = MorseSturm(M.g, M.Rcurve, M.a, M.b)
    rep = verify_geometry(ms, causal=M.causal, h=args.fd_step)
    ok = (rep.max_christoffel_on_axis <= GEOMETRY_LIMITS["christoffel"]
          and rep.convergence_order >= GEOMETRY_LIMITS["order"]
          and rep.curvature_mismatch <= GEOMETRY_LIMITS["mismatch"])
    print(f"on-axis christoffel: {rep.max_christoffel_on_axis:.3e} "
          f"(limit {GEOMETRY_LIMITS['christoffel']:g})")
    print(f"stencil order:       {rep.convergence_order:.3f} "
          f"(limit {GEOMETRY_LIMITS['order']:g})")
    print(f"curvature mismatch:  {rep.curvature_mismatch:.3e} "
          f"(limit {GEOMETRY_LIMITS['mismatch']:g})")
    print(f"metric index:        {rep.index_of_metric} ({rep.causal})")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_trace(args):
    try:
        X = fileio.load_system(args.infile)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        report = conjugate_instants(X, **_detector_opts(args))
    except DriftCeilingError as exc:
        print(f"integrator failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    fileio.save_trace(report, args.out)
    print(f"trace written to {args.out}")
    return EXIT_OK


COMMANDS = {
    "prescribe": cmd_prescribe,
    "detect": cmd_detect,
    "reduce": cmd_reduce,
    "metric": cmd_metric,
    "verify-geometry": cmd_verify_geometry,
    "trace": cmd_trace,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
