"""Command-line interface: solve, generate, qr-path.

Exit codes: 0 on success (solve: converged), 1 when a solve finished
without reaching the requested tolerance, 2 on argument/parse/IO errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .alm import AlmSettings, solve
from .instances import (
    QrSpec,
    SynthSpec,
    generate_synthetic,
    load_quantile_csv,
    solve_path,
)
from .model import kkt_residuals
from .problem_io import (
    ManifestError,
    build_report,
    read_problem,
    read_state,
    write_problem,
    write_report,
)

__all__ = ["main"]


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _out_prefix(out: str) -> str:
    root, _ = os.path.splitext(out)
    return root


def cmd_solve(args) -> int:
    try:
        problem, _ = read_problem(args.manifest)
        warm = read_state(args.warm_start) if args.warm_start else None
        settings = AlmSettings(tol=args.tol, sigma0=args.sigma0,
                               sigma_growth=args.sigma_growth,
                               max_outer=args.max_outer)
    except (ManifestError, ValueError) as exc:
        return _fail(str(exc))
    try:
        result = solve(problem, settings, warm=warm)
    except ValueError as exc:
        return _fail(str(exc))

    state = result.state
    residuals = kkt_residuals(problem, state.x, state.y, state.z, state.lam, state.mu)
    report = build_report(problem, result, settings, residuals)
    if args.out:
        write_report(report, args.out)
    else:
        json.dump(report, sys.stdout, indent=1)
        print()

    if args.trace and args.out:
        _write_trace_csv(result.trace, _out_prefix(args.out) + "_trace.csv")
    if args.figures and args.out:
        from .figures import render_solve_figures

        render_solve_figures(result.trace, report["timing_percent"],
                             _out_prefix(args.out))
    status = "converged" if result.converged else "NOT converged"
    print(f"{status}: objective {report['objective']:.10g}, "
          f"eta {residuals.eta:.3e}, {state.outer_iter} outer / "
          f"{result.inner_iterations} inner iterations, {result.seconds:.2f}s",
          file=sys.stderr)
    return 0 if result.converged else 1


def _write_trace_csv(trace, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outer", "sigma", "inner_iterations", "grad_norm",
                         "eta_p", "eta_d", "eta_r", "eta", "dual_feas",
                         "objective", "seconds", "max_beta", "resorts",
                         "backtracks", "sort_s", "projection_s",
                         "gradient_s", "linear_solve_s"])
        for t in trace:
            writer.writerow([t.outer, t.sigma, t.inner_iterations, t.grad_norm,
                             t.eta_p, t.eta_d, t.eta_r, t.eta, t.dual_feas,
                             t.objective, t.seconds,
                             max(t.beta_sizes, default=0), t.resorts,
                             t.backtracks,
                             t.timing_split.get("sort", 0.0),
                             t.timing_split.get("projection", 0.0),
                             t.timing_split.get("gradient", 0.0),
                             t.timing_split.get("linear_solve", 0.0)])


def cmd_generate(args) -> int:
    try:
        spec = SynthSpec(m=args.m, n=args.n, L=args.L, k_fraction=args.k_frac,
                         objective=args.objective, seed=args.seed)
        problem, witness = generate_synthetic(spec)
    except (ValueError, RuntimeError) as exc:
        return _fail(str(exc))
    path = write_problem(problem, args.out_dir, witness=witness)
    print(f"wrote {path} (m={spec.m}, n={spec.n}, L={spec.L}, k={spec.k}, "
          f"objective={spec.objective}, seed={spec.seed})", file=sys.stderr)
    return 0


def cmd_qr_path(args) -> int:
    try:
        taus = [float(t) for t in args.tau.split(",") if t.strip()]
        if not taus:
            raise ValueError("at least one tau is required")
        features, response, _ = load_quantile_csv(args.data, args.response)
        spec = QrSpec(features=features, response=response, tau_grid=tuple(taus))
        for tau in spec.tau_grid:
            t_eff = 1.0 - tau if tau > 0.5 else tau
            k = (1.0 - t_eff) * spec.m
            if abs(k - round(k)) > 1e-9 * spec.m:
                raise ValueError(
                    f"tau={tau}: (1 - tau) * m = {k} is not an integer")
    except (OSError, ValueError) as exc:
        return _fail(str(exc))

    settings = AlmSettings(tol=args.tol, max_outer=args.max_outer)
    entries = solve_path(spec, settings)

    payload = [{
        "tau": e.tau,
        "coefficients": [float(v) for v in e.coefficients],
        "level": e.level,
        "objective": e.objective,
        "eta": e.eta,
        "converged": e.converged,
        "outer_iterations": e.outer_iterations,
        "inner_iterations": e.inner_iterations,
        "seconds": e.seconds,
        "error": e.error,
    } for e in entries]
    if args.out:
        write_report({"path": payload}, args.out)
        _write_path_csv(entries, _out_prefix(args.out) + ".csv")
        if args.figures:
            from .figures import render_path_figures

            render_path_figures(entries, _out_prefix(args.out))
    else:
        json.dump({"path": payload}, sys.stdout, indent=1)
        print()
    bad = [e for e in entries if not e.converged or e.error is not None]
    for e in bad:
        note = e.error or f"eta {e.eta:.3e} above tolerance"
        print(f"tau {e.tau:g}: {note}", file=sys.stderr)
    return 1 if bad else 0


def _write_path_csv(entries, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "objective", "level", "eta", "converged",
                         "outer_iterations", "inner_iterations", "seconds",
                         "error"])
        for e in entries:
            writer.writerow([e.tau, e.objective, e.level, e.eta,
                             int(e.converged), e.outer_iterations,
                             e.inner_iterations, e.seconds, e.error or ""])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqsolve",
        description="Superquantile-constrained convex optimization solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a problem from a manifest")
    p_solve.add_argument("manifest", help="path to manifest.json")
    p_solve.add_argument("--tol", type=float, default=1e-8)
    p_solve.add_argument("--max-outer", type=int, default=200)
    p_solve.add_argument("--sigma0", type=float, default=1.0)
    p_solve.add_argument("--sigma-growth", type=float, default=2.0)
    p_solve.add_argument("--warm-start", help="report file with a saved state")
    p_solve.add_argument("--out", help="write the JSON report here")
    p_solve.add_argument("--trace", action="store_true",
                         help="also write a per-iteration CSV trace")
    p_solve.add_argument("--figures", action="store_true",
                         help="render convergence/timing figures next to --out")
    p_solve.set_defaults(func=cmd_solve)

    p_gen = sub.add_parser("generate", help="generate a synthetic instance")
    p_gen.add_argument("--m", type=int, required=True)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--L", type=int, default=1)
    p_gen.add_argument("--k-frac", type=float, required=True)
    p_gen.add_argument("--objective", choices=["linear", "quad"], default="linear")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out-dir", required=True)
    p_gen.set_defaults(func=cmd_generate)

    p_qr = sub.add_parser("qr-path", help="quantile-regression solution path")
    p_qr.add_argument("--data", required=True, help="CSV file with a header row")
    p_qr.add_argument("--response", required=True, help="response column name")
    p_qr.add_argument("--tau", required=True, help="comma-separated levels")
    p_qr.add_argument("--tol", type=float, default=1e-4)
    p_qr.add_argument("--max-outer", type=int, default=200)
    p_qr.add_argument("--out", help="write the JSON report here (CSV beside it)")
    p_qr.add_argument("--figures", action="store_true",
                      help="render path figures next to --out")
    p_qr.set_defaults(func=cmd_qr_path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
