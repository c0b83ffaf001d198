"""Acceptance suite: one test per exit criterion, one printed line each.

Run with ``pytest -s tests/test_acceptance.py`` to see every line; the
heavy Monte-Carlo criteria take a few minutes in total.  All randomness
is driven by fixed seeds, so outcomes are reproducible.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from explvar import (
    Dataset,
    MethodSpec,
    NormalPower,
    ChiSquare1,
    Correlated,
    ScenarioConfig,
    centered_gram,
    estimate_r2_ls,
    estimate_r2_weighted,
    iterate_lambda,
    ls_projector,
    mp_tau2_theoretical,
    run_scenario,
    standardize,
    standardize_outcome,
    tau2_hat,
    var_normal_error,
    var_null,
    var_robust,
    weight_diagonals,
    weight_eigenvalues,
)
from explvar.simulation import replicate_rng, report_to_dict
from explvar.variance import MpLaw

from oracles import (
    dense_r2,
    dense_trace_functionals,
    dense_var_normal,
    dense_var_null,
    dense_var_robust,
)

THREADS = 4


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{name}: {detail}"


def test_01_dense_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(20260808)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(4, 9))
        p = int(rng.integers(1, 7))
        z = rng.standard_normal((n, p))
        y = rng.standard_normal(n) + z @ rng.standard_normal(p) * 0.5
        d = standardize(Dataset(outcome=y, covariates=z))
        g = centered_gram(d)
        y_std = standardize_outcome(d.outcome)
        for lam in (0.0, 0.1, 1.0):
            est = estimate_r2_weighted(d, g, lam)
            t = dense_trace_functionals(d.covariates, lam)
            w = weight_eigenvalues(g, lam)
            checks = [
                (est.r2, dense_r2(d.outcome, d.covariates, lam)),
                (float((w**2).sum()), t["tr_w2"]),
                (float((w**2 * g.eigenvalues).sum()), t["tr_w2m"]),
                (float((w * (g.eigenvalues - 1)).sum()), t["tr_w_m_minus_i"]),
                (var_null(g, y_std, lam), dense_var_null(d.covariates, y_std, lam)),
                (var_normal_error(est, g, lam), dense_var_normal(est.r2, d.covariates, lam)),
                (var_robust(est, g, y_std, lam), dense_var_robust(est.r2, d.covariates, y_std, lam)),
            ]
            for got, want in checks:
                worst = max(worst, abs(got - want) / max(abs(want), 1e-12))
            diag_gap = np.abs(weight_diagonals(g, lam) - t["diag_w"]).max()
            worst = max(worst, diag_gap / max(np.abs(t["diag_w"]).max(), 1e-12))
    elapsed = time.perf_counter() - start
    report("1 dense-oracle", worst <= 1e-8 and elapsed < 5.0,
           f"worst relative gap {worst:.2e}, runtime {elapsed:.2f}s")


def _spectral_replicate(n, r2, seed, rep):
    cfg = ScenarioConfig(n=n, p=n, r2_true=r2, replicates=1, seed=seed)
    rng = replicate_rng(seed, rep)
    from explvar.simulation import _design_with_correlation, gen_outcome
    design, corr = _design_with_correlation(cfg, rng)
    y, _ = gen_outcome(design, cfg, rng, correlation=corr)
    d = standardize(Dataset(outcome=y, covariates=design))
    g = centered_gram(d)
    return iterate_lambda(d, g).r2


def test_02_consistency_square_aspect():
    reps = 200
    lines = []
    ok = True
    with ThreadPoolExecutor(max_workers=THREADS) as pool:
        for r2 in (0.0, 0.2, 0.5, 0.8):
            medians = {}
            for n in (200, 800):
                errs = list(pool.map(
                    lambda rep: abs(_spectral_replicate(n, r2, 31337, rep) - r2),
                    range(reps)))
                medians[n] = float(np.median(errs))
            ok = ok and medians[800] < medians[200] and medians[800] <= 0.08
            lines.append(f"r2={r2}: {medians[200]:.4f}->{medians[800]:.4f}")
    report("2 consistency", ok, "median |error| n=200->800: " + "; ".join(lines))


def test_03_coverage_independent_designs():
    cells = []
    ok = True
    for cov, err in ((NormalPower(1.0), NormalPower(1.0)), (ChiSquare1(), NormalPower(3.0))):
        tag = "nn" if isinstance(cov, NormalPower) else "x3"
        for n, p in ((200, 100), (200, 200), (200, 800)):
            for r2 in (0.0, 0.2, 0.5):
                cfg = ScenarioConfig(n=n, p=p, r2_true=r2, covariate_dist=cov,
                                     error_dist=err, replicates=500, seed=777,
                                     methods=(MethodSpec("ee-lambda", "robust", 0.95),))
                c = run_scenario(cfg, threads=THREADS).per_method[
                    "ee-lambda:robust:0.95"].coverage_rate
                good = 0.92 <= c <= 0.98
                ok = ok and good
                cells.append(f"{tag}({n},{p},r2={r2}):{c:.3f}{'' if good else '!'}")
    report("3 coverage-spectral", ok, " ".join(cells))


def test_04_coverage_least_squares():
    cells = []
    ok = True
    for gamma in (1.0, 3.0):
        for r2 in (0.2, 0.5):
            methods = [MethodSpec("ee-ls", "robust", 0.95)]
            if gamma == 1.0:
                methods.append(MethodSpec("ee-ls", "chisq", 0.95))
            cfg = ScenarioConfig(n=400, p=200, r2_true=r2,
                                 error_dist=NormalPower(gamma), replicates=500,
                                 seed=888, methods=tuple(methods))
            rep = run_scenario(cfg, threads=THREADS)
            c_rob = rep.per_method["ee-ls:robust:0.95"].coverage_rate
            good = 0.92 <= c_rob <= 0.98
            ok = ok and good
            cells.append(f"robust(g{gamma:g},r2={r2}):{c_rob:.3f}{'' if good else '!'}")
            if gamma == 1.0:
                c_chi = rep.per_method["ee-ls:chisq:0.95"].coverage_rate
                good = 0.93 <= c_chi <= 0.97
                ok = ok and good
                cells.append(f"chisq(r2={r2}):{c_chi:.3f}{'' if good else '!'}")
    report("4 coverage-ls", ok, " ".join(cells))


def test_05_normal_theory_undercovers_heavy_tails():
    cells = []
    ok = True
    for r2 in (0.2, 0.5):
        cfg = ScenarioConfig(n=400, p=200, r2_true=r2, error_dist=NormalPower(3.0),
                             replicates=500, seed=999,
                             methods=(MethodSpec("ee-lambda", "normal", 0.95),))
        c = run_scenario(cfg, threads=THREADS).per_method[
            "ee-lambda:normal:0.95"].coverage_rate
        ok = ok and c <= 0.90
        cells.append(f"r2={r2}:{c:.3f}")
    report("5 normal-variance-undercovers", ok,
           "gaussian-theory CI coverage with cubed errors " + " ".join(cells))


def test_06_marchenko_pastur_cross_check():
    rng = replicate_rng(123456, 0)
    z = rng.standard_normal((2000, 2000))
    d = standardize(Dataset(outcome=rng.standard_normal(2000), covariates=z))
    g = centered_gram(d)
    gaps = []
    ok = True
    for lam in (0.0, 1.0):
        t_hat = tau2_hat(g, lam)
        t_mp = mp_tau2_theoretical(1.0, lam)
        gap = abs(t_hat - t_mp) / t_mp
        ok = ok and gap <= 0.10
        gaps.append(f"lam={lam:g}: hat={t_hat:.4g} mp={t_mp:.4g} gap={gap:.3f}")
    moment_err = 0.0
    for xi in (0.25, 0.5, 1.0):
        law = MpLaw.for_ratio(xi)
        moment_err = max(moment_err, abs(law.integrate(lambda x: x) - 1.0),
                         abs(law.integrate(lambda x: x * x) - (1.0 + xi)))
    ok = ok and moment_err <= 1e-6
    report("6 mp-cross-check", ok, "; ".join(gaps) + f"; MP moment error {moment_err:.2e}")


def test_07_invariance_suite():
    problems = []
    rng = np.random.default_rng(2024)
    z = rng.standard_normal((40, 12))
    y = z @ rng.standard_normal(12) * 0.4 + rng.standard_normal(40)
    d = standardize(Dataset(outcome=y, covariates=z))
    g = centered_gram(d)

    d_scaled = Dataset(outcome=2.0 * d.outcome, covariates=d.covariates, standardized=True)
    if estimate_r2_weighted(d_scaled, g, 0.3).r2 != estimate_r2_weighted(d, g, 0.3).r2:
        problems.append("spectral scale invariance")
    if estimate_r2_ls(Dataset(outcome=2.0 * y, covariates=z)).r2 != \
            estimate_r2_ls(Dataset(outcome=y, covariates=z)).r2:
        problems.append("ls scale invariance")

    if not np.array_equal(weight_eigenvalues(g, 0.0), g.eigenvalues - 1.0):
        problems.append("W_0 spectrum")
    if np.abs(weight_diagonals(g, 0.0) - (g.m.diagonal() - 1.0)).max() > 1e-10:
        problems.append("W_0 diagonal")

    proj = ls_projector(d)
    w = proj.matrix()
    if np.abs(w @ w - w).max() > 1e-8 or np.abs(w @ d.covariates).max() > 1e-8:
        problems.append("projector laws")

    if np.abs(standardize(d).covariates - d.covariates).max() > 1e-12:
        problems.append("standardize idempotence")

    cfg = ScenarioConfig(n=60, p=30, r2_true=0.3, replicates=10, seed=4242,
                         methods=(MethodSpec("ee-lambda", "robust", 0.95),
                                  MethodSpec("ee-ls", "chisq", 0.95)))
    reports = [json.dumps(report_to_dict(run_scenario(cfg, threads=k)), sort_keys=True)
               for k in (1, 3)]
    if reports[0] != reports[1]:
        problems.append("thread determinism")

    report("7 invariance-suite", not problems,
           "all exact invariants hold" if not problems else "failed: " + ", ".join(problems))


def test_08_correlated_design_robustness():
    cfg = ScenarioConfig(n=400, p=200, r2_true=0.2, design=Correlated(2.0),
                         replicates=300, seed=5150,
                         methods=(MethodSpec("ee-lambda", "robust", 0.95),
                                  MethodSpec("trans-ee", "robust", 0.95)))
    rep = run_scenario(cfg, threads=THREADS)
    ee = rep.per_method["ee-lambda:robust:0.95"]
    trans = rep.per_method["trans-ee:robust:0.95"]
    ok = abs(ee.bias) <= 0.1 and trans.coverage_rate >= ee.coverage_rate
    report("8 correlated-designs", ok,
           f"ee bias {ee.bias:+.4f}, coverage ee {ee.coverage_rate:.3f} "
           f"vs trans-ee {trans.coverage_rate:.3f}")
