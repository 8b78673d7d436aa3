"""Command-line front end.

Subcommands: synth, epc, ensemble, report, verify-analytic, surface.
Every run is deterministic given its flags; CSV output uses '.' decimals,
17 significant digits and LF line endings. Exit codes: 0 success,
1 runtime failure (including failed verification checks), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from . import __version__
from .analytic import (
    ThresholdInterval,
    hermite,
    identity_suite,
    p_kernel,
)
from .harmonics import load_field, save_field, synthesize
from .montecarlo import (
    EnsembleConfig,
    compare_to_theory,
    estimate_moments,
    read_runs_csv,
    run_ensemble,
    write_report_csv,
    write_runs_csv,
)
from .topology import (
    build_triangulation,
    epc_morse,
    find_critical_points,
    mesh_epc_for_field,
    write_epc_csv,
)

PARALLEL_ENV = "SPHEPC_PARALLEL"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_extended(text: str) -> float:
    t = text.strip().lower()
    if t in ("-inf", "-infinity"):
        return -math.inf
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    return float(text)


def _parse_thresholds(text: str) -> list[float]:
    """Comma list of values and/or a:b:step ranges, e.g. "-2:2:0.5,3"."""
    out: list[float] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if ":" in token:
            a, b, step = (float(p) for p in token.split(":"))
            if step <= 0:
                raise ValueError("range step must be positive")
            count = int(round((b - a) / step)) + 1
            out.extend(a + i * step for i in range(count))
        else:
            out.append(float(token))
    if not out:
        raise ValueError("no thresholds given")
    return out


def _default_parallel() -> int:
    env = os.environ.get(PARALLEL_ENV)
    if env:
        return int(env)
    return 0


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    field = synthesize(args.ell, args.seed)
    save_field(field, args.out)
    print(f"wrote field of degree {args.ell} with {field.coefficients.size} "
          f"coefficients to {args.out}")
    return 0


def _load_or_synth(args, parser):
    if args.field:
        return load_field(args.field)
    if args.ell is None or args.seed is None:
        parser.error("provide --field or both --ell and --seed")
    return synthesize(args.ell, args.seed)


def _cmd_epc(args, parser) -> int:
    field = _load_or_synth(args, parser)
    interval = ThresholdInterval(args.lo, args.hi)
    rows = []
    if args.method in ("morse", "both"):
        points = find_critical_points(field)
        res = epc_morse(points, interval)
        mu = res.counts
        print(f"morse chi={res.chi} mu0={mu[0]} mu1={mu[1]} mu2={mu[2]}")
        rows.append((field.seed, res))
    if args.method in ("mesh", "both"):
        tri = build_triangulation(field.degree, args.oversampling)
        res = mesh_epc_for_field(field, tri, interval)
        print(f"mesh chi={res.chi}")
        rows.append((field.seed, res))
    if args.method == "both":
        agree = rows[0][1].chi == rows[1][1].chi
        print("agreement: " + ("yes" if agree else "no"))
    if args.out:
        write_epc_csv(rows, args.out)
    return 0


def _cmd_ensemble(args) -> int:
    thresholds: list = list(_parse_thresholds(args.thresholds)) if args.thresholds else []
    for spec in args.interval or []:
        lo, hi = (_parse_extended(p) for p in spec.split(":"))
        thresholds.append(ThresholdInterval(lo, hi))
    parallel = _default_parallel() if args.parallel is None else args.parallel
    config = EnsembleConfig(
        ell=args.ell,
        n_samples=args.n,
        base_seed=args.base_seed,
        thresholds=thresholds,
        method=args.method,
        oversampling=args.oversampling,
        parallelism=parallel,
    )
    result = run_ensemble(config)
    write_runs_csv(result, args.out)
    print(f"wrote {config.n_samples} samples x {len(config.thresholds)} thresholds "
          f"to {args.out} (+ sidecar)")
    if result.audit:
        print(f"audit events: {len(result.audit)}")
    return 0


def _cmd_report(args) -> int:
    result = read_runs_csv(args.runs)
    n_thr = len(result.config.thresholds)
    pairs = [(i, j) for i in range(n_thr) for j in range(i + 1, n_thr)]
    estimate = estimate_moments(result, pairs=pairs)
    rows = compare_to_theory(estimate, result.config)
    write_report_csv(rows, args.out)
    print(f"wrote {len(rows)} report rows to {args.out}")
    return 0


def _cmd_verify_analytic(args) -> int:
    checks = identity_suite()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["check_name", "max_abs_error", "tolerance", "status"])
        for c in checks:
            writer.writerow(
                [c.name, _fmt(c.max_abs_error), _fmt(c.tolerance),
                 "pass" if c.passed else "fail"]
            )
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{c.name:34s} {c.max_abs_error:.3e} <= {c.tolerance:.0e} "
              f"{'pass' if c.passed else 'FAIL'}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed; table in {args.out}")
    return 1 if failed else 0


def _cmd_surface(args) -> int:
    lo, hi = (float(p) for p in args.range.split(":"))
    if args.step <= 0:
        raise ValueError("step must be positive")
    count = int(round((hi - lo) / args.step)) + 1
    grid = np.array([lo + i * args.step for i in range(count)])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if args.which == "halfline-var":
            writer.writerow(["u", "z"])
            for u in grid:
                z = (hermite(3, u) + 2.0 * hermite(1, u)) ** 2 * math.exp(-u * u)
                writer.writerow([_fmt(u), _fmt(z / (8.0 * math.pi))])
        elif args.which == "cov-kernel":
            writer.writerow(["t1", "t2", "z"])
            for t1 in grid:
                for t2 in grid:
                    writer.writerow(
                        [_fmt(t1), _fmt(t2),
                         _fmt(p_kernel(t1) * p_kernel(t2) / (8.0 * math.pi))]
                    )
        else:  # halfline-cov
            writer.writerow(["u1", "u2", "z"])
            for u1 in grid:
                for u2 in grid:
                    z = (u1 * u2 * (u1 * u1 - 1.0) * (u2 * u2 - 1.0)
                         * math.exp(-0.5 * (u1 * u1 + u2 * u2)) / (8.0 * math.pi))
                    writer.writerow([_fmt(u1), _fmt(u2), _fmt(z)])
    print(f"wrote {args.which} surface to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sphepc",
        description="Simulate random spherical eigenfunctions and measure the "
                    "Euler characteristics of their excursion sets.",
    )
    parser.add_argument("--version", action="version", version=f"sphepc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a field and write it as JSON")
    p.add_argument("--ell", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("epc", help="Euler characteristic of one excursion set")
    p.add_argument("--field", help="field JSON (alternative to --ell/--seed)")
    p.add_argument("--ell", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lo", type=_parse_extended, default=-math.inf)
    p.add_argument("--hi", type=_parse_extended, default=math.inf)
    p.add_argument("--method", choices=["morse", "mesh", "both"], default="morse")
    p.add_argument("--oversampling", type=int, default=8)
    p.add_argument("--out", help="optional CSV output")

    p = sub.add_parser("ensemble", help="run an ensemble and write runs CSV + sidecar")
    p.add_argument("--ell", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--thresholds", default="",
                   help='comma list and/or a:b:step ranges, e.g. "-2:2:0.5"')
    p.add_argument("--interval", action="append", default=[],
                   help='interval threshold "lo:hi" (repeatable; -inf/inf allowed)')
    p.add_argument("--method", choices=["morse", "mesh", "both"], default="morse")
    p.add_argument("--oversampling", type=int, default=8)
    p.add_argument("--parallel", type=int, default=None,
                   help=f"worker processes (default: ${PARALLEL_ENV} or auto)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="theory-vs-experiment report from a runs CSV")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify-analytic", help="run the analytic identity suite")
    p.add_argument("--out", required=True, help="CSV pass/fail table")

    p = sub.add_parser("surface", help="plot-ready CSV of the prediction surfaces")
    p.add_argument("--which", choices=["cov-kernel", "halfline-cov", "halfline-var"],
                   required=True)
    p.add_argument("--range", default="-3:3", help='grid range "a:b"')
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "epc":
            return _cmd_epc(args, parser)
        if args.command == "ensemble":
            return _cmd_ensemble(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "verify-analytic":
            return _cmd_verify_analytic(args)
        if args.command == "surface":
            return _cmd_surface(args)
        parser.error(f"unknown command {args.command}")
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
