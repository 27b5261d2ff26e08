"""Command-line surface: mesh building, certification, solves and sweep tables.

Artifacts land in a per-run directory named from a hash of the resolved
parameters, under $FRACL2_OUT (or --out, or ./runs). CSV artifacts carry one
versioned header line and are otherwise byte-stable across repeat runs and
thread counts. Exit codes: 0 success, 1 numerical failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import CampaignConfig, build_table
from .mesh import MeshSpec, build_graded, check_mesh_regularity, load_mesh, save_mesh
from .monotone import certify, compute_K, sigma_bar
from .solve import (dump_solution_csv, parabolic_preset, scalar_preset,
                    solve_parabolic_1d, solve_scalar)
from .util import config_hash

_BENCH_MS = (2**5, 2**7, 2**9, 2**11, 2**13, 2**15)
_BENCH_ALPHAS = (0.3, 0.5, 0.7)


def _out_base(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("FRACL2_OUT", "runs"))


def _run_dir(args, command: str, params: dict) -> tuple[Path, str]:
    digest = config_hash(params)
    d = _out_base(args) / f"{command}-{digest}"
    d.mkdir(parents=True, exist_ok=True)
    return d, digest


def _header(command: str, digest: str) -> str:
    return f"# fracl2 {__version__} {command} config={digest}"


def _add_mesh_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--T", type=float, default=1.0, help="time horizon")
    p.add_argument("--M", type=int, default=64, help="number of time steps")
    p.add_argument("--r", type=float, default=None, help="grading exponent")
    p.add_argument("--uniform", action="store_true", help="uniform mesh (r=1)")
    p.add_argument("--modified", action="store_true",
                   help="offset-graded mesh (needs --K, or --alpha to derive it)")
    p.add_argument("--K", type=int, default=None, help="offset / linear-prefix length")
    p.add_argument("--file", type=str, default=None, help="read mesh nodes from a file")


def _mesh_from_args(args, default_r: float = 1.0):
    """Build or load the mesh; returns (mesh, info dict for hashing/echo)."""
    if args.file:
        mesh = load_mesh(args.file)
        return mesh, {"file": str(args.file), "M": mesh.M, "T": mesh.T}
    r = default_r if args.r is None else args.r
    K = args.K
    if args.uniform:
        variant, r = "uniform", 1.0
    elif args.modified:
        variant = "modified_graded"
        if K is None:
            alpha = getattr(args, "alpha", None)
            theta = getattr(args, "theta", 1.0)
            if alpha is None:
                raise ValueError("--modified needs --K, or --alpha (+ --theta) "
                                 "to compute it")
            K = compute_K(r, sigma_bar(alpha, theta))
            print(f"K auto-computed: {K} (r={r}, alpha={alpha}, theta={theta})")
    else:
        variant = "graded"
    spec = MeshSpec(T=args.T, M=args.M, r=r, variant=variant, K=K or 1)
    return build_graded(spec), {"T": args.T, "M": args.M, "r": r,
                                "variant": variant, "K": K or 1}


def cmd_mesh(args) -> int:
    mesh, info = _mesh_from_args(args)
    rdir, digest = _run_dir(args, "mesh", info)
    save_mesh(mesh, rdir / "mesh.txt")
    report = None
    if mesh.M >= 3:
        report = check_mesh_regularity(mesh, r=info.get("r", 1.0))
        (rdir / "regularity.json").write_text(json.dumps({
            "ok": report.ok,
            "sigma_monotone_nonneg": report.sigma_monotone_nonneg,
            "first_sigma_violation": report.first_sigma_violation,
            "rho_monotone_ge1": report.rho_monotone_ge1,
            "max_sigma": report.max_sigma,
            "tau1_Mr": report.tau1_Mr,
            "ratio_tau_range": list(report.ratio_tau_range),
            "ratio_node_range": list(report.ratio_node_range),
        }, indent=2) + "\n")
    print(f"mesh: M={mesh.M} T={mesh.T} nodes written to {rdir / 'mesh.txt'}")
    if report is not None:
        print(f"regularity: ok={report.ok} max_sigma={report.max_sigma:.6f}")
    return 0


def cmd_certify(args) -> int:
    mesh, info = _mesh_from_args(args, default_r=1.0)
    params = {**info, "alpha": args.alpha, "theta": args.theta,
              "variant": args.variant, "K": args.K,
              "verify_inverse": args.verify_inverse}
    rdir, digest = _run_dir(args, "certify", params)
    cert = certify(mesh, args.alpha, theta=args.theta, variant=args.variant,
                   K=args.K, verify_inverse=args.verify_inverse)
    cert.to_json(rdir / "certificate.json")
    status = "PASS" if cert.passed else "FAIL"
    print(f"certificate: {status} (sigma_bar={cert.sigma_bar:.6f}, "
          f"K={cert.K}, M={cert.M})")
    if not cert.passed:
        for c in cert.conditions:
            if not c.passed:
                print(f"  condition {c.name} violated first at m={c.first_violation_m}")
        if not cert.sigma_monotone:
            print("  sigma sequence not monotone nonincreasing / nonnegative")
        if not cert.betas_in_unit:
            print("  damping schedule leaves (0,1)")
    if cert.inverse_checked:
        print(f"  brute-force inverse min entry: {cert.inverse_min_entry:.3e}")
    print(f"written: {rdir / 'certificate.json'}")
    return 0


def cmd_solve(args) -> int:
    alpha = args.alpha
    r = args.r if args.r is not None else (3.0 - alpha) / alpha
    args.r = r
    mesh, info = _mesh_from_args(args, default_r=r)
    params = {**info, "preset": args.preset, "alpha": alpha,
              "variant": args.variant, "K": args.K or 1,
              "precision": args.precision, "N": args.N}
    rdir, digest = _run_dir(args, "solve", params)
    if args.preset in ("talpha", "quad", "zero"):
        problem = scalar_preset(args.preset, alpha, T=mesh.T)
        res = solve_scalar(problem, mesh, variant=args.variant,
                           K=args.K or 1, precision=args.precision)
    elif args.preset == "sinx":
        problem = parabolic_preset("sinx", alpha, T=mesh.T, N=args.N)
        res = solve_parabolic_1d(problem, mesh, variant=args.variant, K=args.K or 1)
    else:
        raise ValueError(f"unknown preset {args.preset!r}")
    times = None
    if args.snapshots:
        times = [float(s) for s in args.snapshots.split(",")]
    dump_solution_csv(res, rdir / "solution.csv", times=times,
                      header=_header("solve", digest))
    if res.errors is not None:
        print(f"error at T: {res.error_at_T:.6e}   max: {res.max_error:.6e}")
    r_used = info.get("r")
    rtxt = f"{r_used:.6g}" if r_used is not None else "file"
    print(f"solve: preset={args.preset} alpha={alpha} r={rtxt} M={mesh.M} "
          f"({res.seconds:.2f}s)")
    print(f"written: {rdir / 'solution.csv'}")
    return 0


def _benchmark_campaign(which: str, Ms, threads: int) -> CampaignConfig:
    if which == "errors-at-1":
        rules = ("1", "(3-alpha)/0.95", "(3-alpha)/alpha")
        metric = "at-final-time"
    elif which == "max-nodal":
        rules = ("1", "3-alpha", "(3-alpha)/alpha")
        metric = "max-nodal"
    else:
        raise ValueError(f"unknown benchmark table {which!r}; "
                         f"choose errors-at-1 or max-nodal")
    return CampaignConfig(problem="talpha", alphas=_BENCH_ALPHAS, r_rules=rules,
                          Ms=tuple(Ms), metric=metric, threads=threads)


def cmd_table(args) -> int:
    if args.benchmark:
        Ms = [int(s) for s in args.Ms.split(",")] if args.Ms else _BENCH_MS
        config = _benchmark_campaign(args.benchmark, Ms, args.threads)
    elif args.config:
        data = json.loads(Path(args.config).read_text())
        for key, flag in (("alphas", args.alphas), ("r_rules", args.rules),
                          ("Ms", args.Ms)):
            if flag:
                data[key] = [v for v in flag.split(",")]
        if args.metric:
            data["metric"] = args.metric
        data["threads"] = args.threads
        config = CampaignConfig.from_dict(data)
    else:
        alphas = args.alphas or ""
        rules = args.rules or ""
        Ms = args.Ms or ""
        if not (alphas and rules and Ms):
            print("table: need --benchmark, --config, or all of --alphas/--rules/--Ms",
                  file=sys.stderr)
            return 2
        config = CampaignConfig(
            problem=args.problem, alphas=[float(s) for s in alphas.split(",")],
            r_rules=rules.split(","), Ms=[int(s) for s in Ms.split(",")],
            metric=args.metric or "at-final-time", threads=args.threads)
    # parallelism is not part of the experiment identity: same campaign, same dir
    hash_params = {k: v for k, v in config.to_dict().items() if k != "threads"}
    rdir, digest = _run_dir(args, "table", hash_params)
    table = build_table(config, threads=args.threads)
    (rdir / "table.csv").write_text(_header("table", digest) + "\n" + table.to_csv())
    (rdir / "table.txt").write_text(table.to_text())
    (rdir / "table.json").write_text(table.to_json() + "\n")
    print(table.to_text(), end="")
    bad = [s for row in table.rows for s in row.statuses if s != "ok"]
    if bad:
        print(f"table: {len(bad)} cell(s) failed", file=sys.stderr)
        return 1
    print(f"written: {rdir / 'table.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fracl2",
        description="Nonuniform-mesh fractional-derivative scheme: meshes, "
                    "monotonicity certificates, solves and convergence tables.")
    ap.add_argument("--out", type=str, default=None,
                    help="output base directory (default $FRACL2_OUT or ./runs)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build or validate a temporal mesh")
    _add_mesh_args(p)
    p.add_argument("--alpha", type=float, default=None, help="for auto-K")
    p.add_argument("--theta", type=float, default=1.0, help="for auto-K")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("certify", help="evaluate the monotone-factorization conditions")
    _add_mesh_args(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--variant", choices=("standard", "l1_start"), default="standard")
    p.add_argument("--verify-inverse", action="store_true",
                   help="brute-force the inverse sign check (M <= 512)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("solve", help="run a preset problem on a mesh")
    _add_mesh_args(p)
    p.add_argument("--preset", choices=("talpha", "quad", "zero", "sinx"),
                   default="talpha")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--variant", choices=("standard", "l1_start"), default="standard")
    p.add_argument("--precision", choices=("double", "extended"), default="extended")
    p.add_argument("--N", type=int, default=64, help="interior spatial nodes (sinx)")
    p.add_argument("--snapshots", type=str, default=None,
                   help="comma-separated times for parabolic CSV snapshots")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("table", help="run an (alpha, r, M) sweep and print the table")
    p.add_argument("--benchmark", choices=("errors-at-1", "max-nodal"), default=None,
                   help="run a bundled convergence benchmark layout")
    p.add_argument("--config", type=str, default=None, help="campaign config JSON")
    p.add_argument("--problem", type=str, default="talpha")
    p.add_argument("--alphas", type=str, default=None, help="comma list")
    p.add_argument("--rules", type=str, default=None,
                   help="comma list of r rules, e.g. 1,(3-alpha)/alpha")
    p.add_argument("--Ms", type=str, default=None, help="comma list of step counts")
    p.add_argument("--metric", type=str, default=None,
                   choices=("at-final-time", "max-nodal", "l2-at-final"))
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
