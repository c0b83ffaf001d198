"""Command-line interface: estimate, simulate, mp-check.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure.  All reports are emitted on stdout; diagnostics go to stderr.
JSON output is serialized with sorted keys and a fixed indent so that
parsing and re-serializing a report is byte-identical.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Dataset,
    centered_gram,
    decorrelate,
    estimate_correlation,
    expand_interactions,
    load_csv,
    standardize,
    standardize_outcome,
)
from .errors import DataError, NumericError
from .estimator import estimate_r2_ls, iterate_lambda, ls_projector
from .simulation import (
    ScenarioConfig,
    parse_scenario,
    replicate_rng,
    report_to_dict,
    run_scenario,
)
from .variance import (
    VarianceMethod,
    chi_square_interval,
    mp_tau2_theoretical,
    normal_interval,
    tau2_hat,
    var_ls,
    var_normal_error,
    var_null,
    var_robust,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

METHOD_CHOICES = ("ee-lambda", "ee-ls", "trans-ee")
VARIANCE_CHOICES = ("null", "normal", "robust")
FORMAT_CHOICES = ("json", "csv", "text")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _parse_levels(text: str) -> list[float]:
    try:
        levels = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise DataError(f"cannot parse levels {text!r}") from None
    if not levels or any(not 0.0 < lv < 1.0 for lv in levels):
        raise DataError("levels must be a non-empty comma list of values in (0,1)")
    return levels


def _log_covariates(d: Dataset) -> Dataset:
    x = d.covariates
    bad = np.flatnonzero((x <= 0).any(axis=0))
    if bad.size:
        name = d.column_names[bad[0]] if d.column_names else f"#{bad[0]}"
        raise DataError(f"--log-covariates requires strictly positive columns; column {name} is not")
    return Dataset(d.outcome, np.log(x), d.column_names, standardized=False)


def _default_method(n: int, p: int) -> str:
    # least squares needs n > rank + 1; rank can reach min(n - 1, p)
    return "ee-ls" if n >= p + 2 else "ee-lambda"


def run_estimate(args) -> dict:
    d = load_csv(args.input, args.outcome)
    if args.log_covariates:
        d = _log_covariates(d)
    if args.interactions:
        d = expand_interactions(d)
    else:
        d = standardize(d)
    n, p = d.n, d.p
    method = args.method or _default_method(n, p)
    levels = _parse_levels(args.level)
    y_std = standardize_outcome(d.outcome)

    lambda_final = float("nan")
    rank = None
    diagnostics: dict = {}

    if method == "ee-ls":
        proj = ls_projector(d)
        est = estimate_r2_ls(d, proj)
        rank = proj.rank
        if args.variance == "null":
            raise DataError("null-case variance applies to ee-lambda/trans-ee")
        v2 = var_ls(est, proj, y_std, robust=args.variance == "robust")
        chisq = chi_square_interval(est.r2, n, proj.rank, levels[0])
        diagnostics["chi_square_interval"] = {"level": levels[0], "lower": chisq[0], "upper": chisq[1]}
    else:
        work = d
        if method == "trans-ee":
            corr = estimate_correlation(d)
            work = decorrelate(d, corr)
        g = centered_gram(work)
        est = iterate_lambda(work, g, args.lambda0, args.iterations)
        lambda_final = est.lambda_final
        rank = g.rank
        if args.variance == "null":
            v2 = var_null(g, y_std, est.lambda_final)
        elif args.variance == "normal":
            v2 = var_normal_error(est, g, est.lambda_final)
        else:
            v2 = var_robust(est, g, y_std, est.lambda_final)
        eigs = g.eigenvalues
        diagnostics["eigenvalue_max"] = float(eigs[0])
        diagnostics["eigenvalue_min_nonzero"] = float(eigs[g.rank - 1]) if g.rank else 0.0
        diagnostics["tau2_hat"] = tau2_hat(g, est.lambda_final)

    intervals = []
    for lv in levels:
        rep = normal_interval(est, v2, n, lv, VarianceMethod(args.variance))
        intervals.append({
            "level": lv,
            "lower": rep.lower,
            "upper": rep.upper,
            "sigma_s2_lower": rep.sigma_s2_interval[0],
            "sigma_s2_upper": rep.sigma_s2_interval[1],
            "sigma_eps2_lower": rep.sigma_eps2_interval[0],
            "sigma_eps2_upper": rep.sigma_eps2_interval[1],
        })

    wd = est.weight_diagnostics
    diagnostics.update({
        "denominator_c": est.denominator_c,
        "tr_w2_over_n": wd.tr_w2_over_n,
        "tr_w2m_over_n": wd.tr_w2m_over_n,
        "sum_wii2_over_n": wd.sum_wii2_over_n,
    })
    return {
        "meta": {
            "tool": "explvar",
            "version": __version__,
            "input": str(args.input),
            "outcome_column": str(args.outcome),
            "n": n,
            "p": p,
            "xi": n / p,
            "rank": rank,
            "method": method,
            "variance": args.variance,
            "interactions": bool(args.interactions),
            "log_covariates": bool(args.log_covariates),
            "lambda0": args.lambda0,
            "iterations": args.iterations,
        },
        "estimate": {
            "r2": est.r2,
            "r2_clamped": est.r2_clamped,
            "sigma_s2": est.sigma_s2,
            "sigma_eps2": est.sigma_eps2,
            "sigma_y2": est.sigma_y2,
            "lambda_final": lambda_final,
        },
        "variance": {"method": args.variance, "v2": v2},
        "intervals": intervals,
        "diagnostics": diagnostics,
    }


def _estimate_csv(report: dict) -> str:
    buf = io.StringIO()
    head = ["n", "p", "method", "variance", "r2", "r2_clamped", "sigma_s2", "sigma_eps2",
            "lambda_final", "v2", "level", "lower", "upper"]
    buf.write(",".join(head) + "\n")
    meta, est, var = report["meta"], report["estimate"], report["variance"]
    for iv in report["intervals"]:
        row = [meta["n"], meta["p"], meta["method"], meta["variance"],
               est["r2"], est["r2_clamped"], est["sigma_s2"], est["sigma_eps2"],
               est["lambda_final"], var["v2"], iv["level"], iv["lower"], iv["upper"]]
        buf.write(",".join(str(v) for v in row) + "\n")
    return buf.getvalue()


def _estimate_text(report: dict) -> str:
    meta, est, var = report["meta"], report["estimate"], report["variance"]
    lines = [
        f"explained variation estimate ({meta['method']}, {meta['variance']} variance)",
        f"  n = {meta['n']}, p = {meta['p']}, xi = {meta['xi']:.4g}, rank = {meta['rank']}",
        f"  r2 = {est['r2']:.6f} (clamped {est['r2_clamped']:.6f})",
        f"  sigma_s2 = {est['sigma_s2']:.6f}, sigma_eps2 = {est['sigma_eps2']:.6f}, sigma_y2 = {est['sigma_y2']:.6f}",
        f"  lambda_final = {est['lambda_final']}",
        f"  v2 = {var['v2']:.6f}",
    ]
    for iv in report["intervals"]:
        lines.append(f"  {iv['level']:.0%} CI: [{iv['lower']:.6f}, {iv['upper']:.6f}]")
    return "\n".join(lines) + "\n"


def _scenario_csv(report_dict: dict) -> str:
    cfg = report_dict["config"]
    buf = io.StringIO()
    cfg_keys = sorted(k for k in cfg if k != "methods")
    head = cfg_keys + ["method", "coverage_rate", "avg_ci_length", "bias", "mse",
                       "mean_variance_estimate", "empirical_variance",
                       "replicate_failures", "replicates_used"]
    buf.write(",".join(head) + "\n")
    for label, metrics in report_dict["per_method"].items():
        row = [cfg[k] for k in cfg_keys] + [
            label,
            metrics["coverage_rate"], metrics["avg_ci_length"], metrics["bias"],
            metrics["mse"], metrics["mean_variance_estimate"], metrics["empirical_variance"],
            report_dict["replicate_failures"], report_dict["replicates_used"],
        ]
        buf.write(",".join(str(v) for v in row) + "\n")
    return buf.getvalue()


def run_simulate(args) -> tuple[dict, str]:
    path = Path(args.scenario)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read scenario {path}: {exc}") from exc
    cfg: ScenarioConfig = parse_scenario(text)
    report = run_scenario(cfg, threads=args.threads)
    rd = report_to_dict(report)
    out_dir = Path(args.out_dir) if args.out_dir else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    (out_dir / f"{stem}_report.json").write_text(_dump_json(rd) + "\n")
    (out_dir / f"{stem}_report.csv").write_text(_scenario_csv(rd))
    return rd, str(out_dir / f"{stem}_report")


def run_mp_check(args) -> dict:
    n, p = args.n, args.p
    if n < 4 or p < 4:
        raise DataError("mp-check needs n >= 4 and p >= 4")
    rng = replicate_rng(args.seed, 0)
    z = rng.standard_normal((n, p))
    d = standardize(Dataset(outcome=rng.standard_normal(n), covariates=z, standardized=False))
    g = centered_gram(d)
    t_hat = tau2_hat(g, args.lam)
    t_mp = mp_tau2_theoretical(n / p, args.lam)
    gap = abs(t_hat - t_mp) / abs(t_mp) if t_mp != 0 else math.inf
    return {
        "n": n,
        "p": p,
        "xi": n / p,
        "lambda": args.lam,
        "seed": args.seed,
        "tau2_hat": t_hat,
        "tau2_mp": t_mp,
        "relative_gap": gap,
        "mp_atom_at_zero": max(0.0, 1.0 - p / n),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="explvar",
        description="Explained-variation estimation for high-dimensional linear models",
    )
    parser.add_argument("--version", action="version", version=f"explvar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate explained variation from a CSV file")
    est.add_argument("--input", required=True, help="CSV file with one header row")
    est.add_argument("--outcome", required=True, help="outcome column name or 0-based index")
    est.add_argument("--method", choices=METHOD_CHOICES, default=None,
                     help="default: ee-ls when n > p + 1, else ee-lambda")
    est.add_argument("--variance", choices=VARIANCE_CHOICES, default="robust")
    est.add_argument("--level", default="0.95", help="comma-separated confidence levels")
    est.add_argument("--lambda0", type=float, default=0.1)
    est.add_argument("--iterations", type=int, default=5)
    est.add_argument("--interactions", action="store_true",
                     help="add pairwise interaction columns before standardizing")
    est.add_argument("--log-covariates", action="store_true",
                     help="natural log of all covariates (must be strictly positive)")
    est.add_argument("--format", choices=FORMAT_CHOICES, default="json")
    est.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    est.add_argument("--threads", type=int, default=1, help="unused; accepted for uniformity")

    sim = sub.add_parser("simulate", help="run a scenario file and write JSON/CSV reports")
    sim.add_argument("scenario", help="flat key=value scenario file")
    sim.add_argument("--out-dir", default=None, help="report directory (default: beside the scenario)")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--format", choices=FORMAT_CHOICES, default="json")

    mp = sub.add_parser("mp-check", help="compare tau2_hat against its Marchenko-Pastur limit")
    mp.add_argument("--n", type=int, required=True)
    mp.add_argument("--p", type=int, required=True)
    mp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    mp.add_argument("--seed", type=int, default=0)
    mp.add_argument("--format", choices=FORMAT_CHOICES, default="json")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            report = run_estimate(args)
            if args.format == "json":
                print(_dump_json(report))
            elif args.format == "csv":
                sys.stdout.write(_estimate_csv(report))
            else:
                sys.stdout.write(_estimate_text(report))
        elif args.command == "simulate":
            rd, prefix = run_simulate(args)
            if args.format == "json":
                print(_dump_json(rd))
            elif args.format == "csv":
                sys.stdout.write(_scenario_csv(rd))
            else:
                for label, metrics in rd["per_method"].items():
                    print(f"{label}: coverage={metrics['coverage_rate']:.3f} "
                          f"length={metrics['avg_ci_length']:.3f} bias={metrics['bias']:+.4f}")
            print(f"reports written to {prefix}.json / {prefix}.csv", file=sys.stderr)
        else:
            report = run_mp_check(args)
            if args.format == "json":
                print(_dump_json(report))
            else:
                print(f"tau2_hat={report['tau2_hat']:.6g} tau2_mp={report['tau2_mp']:.6g} "
                      f"relative_gap={report['relative_gap']:.4f}")
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
