"""Monte-Carlo harness: data generators, scenario runner, coverage reporting.

Replicates are driven by counter-based random streams keyed by
``(seed, replicate_index)``, so a scenario's report is a pure function of
its configuration no matter how replicates are scheduled across threads.
Aggregation uses ``math.fsum`` over replicate-ordered lists for the same
reason.

Covariates and errors start from standard normal draws pushed through the
power transform ``u -> sign(u) |u|^gamma`` (dropping the sign yields the
chi-square(1) covariate option).  Errors are rescaled by their exact
distributional standard deviation, available in closed form through the
gamma function for every power, so the target noise variance is hit
exactly in population.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import special

from .data import Dataset, centered_gram, decorrelate, estimate_correlation, standardize, standardize_outcome
from .errors import DataError, NumericError
from .estimator import (
    DEFAULT_ITERATIONS,
    DEFAULT_LAMBDA0,
    estimate_r2_ls,
    iterate_lambda,
    ls_projector,
)
from .variance import (
    chi_square_bounds_raw,
    normal_margin,
    var_ls,
    var_normal_error,
    var_null,
    var_robust,
)

TOTAL_VARIANCE = 10.0  # signal + noise variance on the generator's scale

ESTIMATOR_NAMES = ("ee-lambda", "ee-ls", "trans-ee")
VARIANCE_NAMES = ("null", "normal", "robust", "chisq")

MAX_FAILURE_FRACTION = 0.05
_MAX_CORR_ATTEMPTS = 10


@dataclass(frozen=True)
class NormalPower:
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise DataError(f"power-transform gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class ChiSquare1:
    """Squared standard normal draws (the sign-dropping transform at gamma=2)."""


@dataclass(frozen=True)
class Exponential:
    """Centered unit-rate exponential errors."""


@dataclass(frozen=True)
class Independent:
    pass


@dataclass(frozen=True)
class Correlated:
    a: float = 2.0


CovariateDist = Union[NormalPower, ChiSquare1]
ErrorDist = Union[NormalPower, Exponential]
DesignKind = Union[Independent, Correlated]


@dataclass(frozen=True)
class MethodSpec:
    """One (estimator, interval) pair evaluated per replicate."""

    estimator: str
    variance: str
    level: float = 0.95

    def __post_init__(self) -> None:
        if self.estimator not in ESTIMATOR_NAMES:
            raise DataError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATOR_NAMES}")
        if self.variance not in VARIANCE_NAMES:
            raise DataError(f"unknown variance {self.variance!r}; choose from {VARIANCE_NAMES}")
        if self.variance == "chisq" and self.estimator != "ee-ls":
            raise DataError("the chi-square interval applies to the ee-ls estimator only")
        if self.variance == "null" and self.estimator == "ee-ls":
            raise DataError("null-case variance applies to the spectral-weight estimators")
        if not 0.0 < self.level < 1.0:
            raise DataError(f"level must be in (0,1), got {self.level}")

    @property
    def label(self) -> str:
        return f"{self.estimator}:{self.variance}:{self.level:g}"


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    p: int
    r2_true: float
    covariate_dist: CovariateDist = NormalPower(1.0)
    error_dist: ErrorDist = NormalPower(1.0)
    design: DesignKind = Independent()
    effect_pattern: str = "half-constant"  # or "normal-random"
    replicates: int = 1
    seed: int = 0
    methods: tuple[MethodSpec, ...] = (MethodSpec("ee-lambda", "robust", 0.95),)

    def __post_init__(self) -> None:
        if self.n < 4:
            raise DataError("n must be at least 4")
        if self.p < 1:
            raise DataError("p must be at least 1")
        if not 0.0 <= self.r2_true < 1.0:
            raise DataError(f"r2_true must be in [0,1), got {self.r2_true}")
        if self.effect_pattern not in ("half-constant", "normal-random"):
            raise DataError(f"unknown effect_pattern {self.effect_pattern!r}")
        if self.replicates < 1:
            raise DataError("replicates must be >= 1")
        if not self.methods:
            raise DataError("at least one method is required")
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass(frozen=True)
class MethodMetrics:
    coverage_rate: float
    avg_ci_length: float
    bias: float
    mse: float
    mean_variance_estimate: float
    empirical_variance: float


@dataclass(frozen=True)
class ScenarioReport:
    config: ScenarioConfig
    per_method: dict[str, MethodMetrics]
    replicate_failures: int
    replicates_used: int


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Counter-based stream for one replicate, independent of execution order."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(replicate)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def power_transform(u, gamma: float, drop_sign: bool = False):
    """``sign(u) |u|**gamma``, or ``|u|**gamma`` when the sign is dropped."""
    if gamma <= 0:
        raise DataError(f"gamma must be > 0, got {gamma}")
    mag = np.abs(u) ** gamma
    return mag if drop_sign else np.sign(u) * mag


def normal_power_sd(gamma: float) -> float:
    """Exact standard deviation of sign(u)|u|^gamma for standard normal u.

    The transform is odd, so its mean is 0 and the variance is
    E|u|^(2 gamma) = 2^gamma Gamma(gamma + 1/2) / sqrt(pi).
    """
    return math.sqrt(2.0**gamma * special.gamma(gamma + 0.5) / math.sqrt(math.pi))


def _standardize_columns(x: np.ndarray) -> np.ndarray:
    return (x - x.mean(axis=0)) / x.std(axis=0, ddof=1)


def _covariate_draw(dist: CovariateDist, n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.standard_normal((n, p))
    if isinstance(dist, ChiSquare1):
        return power_transform(u, 2.0, drop_sign=True)
    return power_transform(u, dist.gamma)


def _random_correlation(p: int, a: float, rng: np.random.Generator) -> np.ndarray:
    """Random all-positive correlation matrix with a wide spread of entries.

    D = (AB)'(AB) for A ~ N(a,1) and B ~ U[-0.5,0.5] entries, entrywise
    absolute value, normalized to unit diagonal, then repaired to positive
    semidefinite by flooring negative eigenvalues at zero and renormalizing.
    Regenerates (up to a cap) if flooring would move the spectrum by more
    than half its radius.
    """
    for _ in range(_MAX_CORR_ATTEMPTS):
        amat = rng.normal(loc=a, scale=1.0, size=(p, p))
        bmat = rng.uniform(-0.5, 0.5, size=(p, p))
        ab = amat @ bmat
        d = np.abs(ab.T @ ab)
        scale = np.sqrt(np.outer(d.diagonal(), d.diagonal()))
        if np.any(scale == 0):
            continue
        c = d / scale
        c = (c + c.T) / 2.0
        np.fill_diagonal(c, 1.0)
        eig, vec = np.linalg.eigh(c)
        radius = max(abs(eig[0]), abs(eig[-1]))
        if eig[0] < -0.5 * radius:
            continue
        c = (vec * np.clip(eig, 0.0, None)) @ vec.T
        diag = np.sqrt(np.clip(c.diagonal(), 1e-12, None))
        c = c / np.outer(diag, diag)
        c = (c + c.T) / 2.0
        np.fill_diagonal(c, 1.0)
        return c
    raise NumericError(f"could not build a positive semidefinite correlation in {_MAX_CORR_ATTEMPTS} attempts")


def _design_with_correlation(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(cfg.design, Independent):
        raw = _covariate_draw(cfg.covariate_dist, cfg.n, cfg.p, rng)
        return _standardize_columns(raw), None
    c = _random_correlation(cfg.p, cfg.design.a, rng)
    raw = _covariate_draw(cfg.covariate_dist, cfg.n, cfg.p, rng)
    raw = raw / raw.std(axis=0, ddof=1)
    eig, vec = np.linalg.eigh(c)
    half = (vec * np.sqrt(np.clip(eig, 0.0, None))) @ vec.T
    return raw @ half, c


def gen_design(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Covariate matrix for one replicate (column-standardized when independent)."""
    return _design_with_correlation(cfg, rng)[0]


def gen_outcome(design: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator,
                correlation: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Outcome vector and effect vector for one replicate.

    The signal and noise variances follow sigma_s^2 = 10 r2, sigma_e^2 =
    10 (1 - r2).  Effects are either a constant on the first half of the
    coordinates or scaled normal draws; in both cases they are normalized
    so the population signal variance alpha' C alpha equals sigma_s^2
    exactly (C the design's population correlation, identity when
    independent).  Errors are scaled by their exact distributional sd.
    """
    n, p = design.shape
    sigma_s2 = TOTAL_VARIANCE * cfg.r2_true
    sigma_e2 = TOTAL_VARIANCE * (1.0 - cfg.r2_true)

    alpha = np.zeros(p)
    if sigma_s2 > 0:
        if cfg.effect_pattern == "half-constant":
            nonzero = max(1, p // 2)
            alpha[:nonzero] = 1.0
        else:
            alpha = rng.standard_normal(p)
        quad = float(alpha @ alpha) if correlation is None else float(alpha @ correlation @ alpha)
        if quad <= 0:
            raise NumericError("degenerate effect direction: zero signal variance")
        alpha *= math.sqrt(sigma_s2 / quad)

    if isinstance(cfg.error_dist, Exponential):
        eps = rng.exponential(1.0, size=n) - 1.0
    else:
        eps = power_transform(rng.standard_normal(n), cfg.error_dist.gamma)
        eps = eps / normal_power_sd(cfg.error_dist.gamma)
    y = design @ alpha + eps * math.sqrt(sigma_e2)
    return y, alpha


@dataclass
class _MethodTally:
    covers: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    points: list = field(default_factory=list)
    v2s: list = field(default_factory=list)


def _run_methods(d: Dataset, cfg: ScenarioConfig) -> dict[str, tuple[float, float, float, float]]:
    """Evaluate every configured method on one standardized dataset.

    Returns label -> (point, raw lower, raw upper, v2/n).  Interval bounds
    are reported before clamping: coverage at a boundary truth (r2 = 0)
    would otherwise saturate near 1 once negative lower bounds are clamped
    up to 0.  The Gram matrix, least-squares fit, and decorrelated
    pipeline are each computed at most once and shared across methods.
    """
    n = d.n
    y_std = standardize_outcome(d.outcome)
    out: dict[str, tuple[float, float, float, float]] = {}

    gram = None
    gram_est = None
    ls_proj = None
    ls_est = None
    trans = None

    for spec in cfg.methods:
        if spec.estimator == "ee-lambda":
            if gram is None:
                gram = centered_gram(d)
                gram_est = iterate_lambda(d, gram, DEFAULT_LAMBDA0, DEFAULT_ITERATIONS)
            est, g = gram_est, gram
        elif spec.estimator == "trans-ee":
            if trans is None:
                corr = estimate_correlation(d)
                d2 = decorrelate(d, corr)
                g2 = centered_gram(d2)
                trans = (iterate_lambda(d2, g2, DEFAULT_LAMBDA0, DEFAULT_ITERATIONS), g2)
            est, g = trans
        else:
            if ls_proj is None:
                ls_proj = ls_projector(d)
                ls_est = estimate_r2_ls(d, ls_proj)
            est, g = ls_est, None

        if spec.estimator == "ee-ls":
            if spec.variance == "chisq":
                lower, upper = chi_square_bounds_raw(est.r2, n, ls_proj.rank, spec.level)
                out[spec.label] = (est.r2, lower, upper, float("nan"))
                continue
            v2 = var_ls(est, ls_proj, y_std, robust=spec.variance == "robust")
        elif spec.variance == "null":
            v2 = var_null(g, y_std, est.lambda_final)
        elif spec.variance == "normal":
            v2 = var_normal_error(est, g, est.lambda_final)
        else:
            v2 = var_robust(est, g, y_std, est.lambda_final)
        margin = normal_margin(v2, n, spec.level)
        out[spec.label] = (est.r2, est.r2 - margin, est.r2 + margin, v2 / n)
    return out


def _one_replicate(cfg: ScenarioConfig, replicate: int) -> dict[str, tuple[float, float, float, float]] | None:
    rng = replicate_rng(cfg.seed, replicate)
    try:
        with warnings.catch_warnings():
            # per-replicate numerical warnings are not actionable in aggregate
            warnings.simplefilter("ignore")
            design, corr = _design_with_correlation(cfg, rng)
            y, _ = gen_outcome(design, cfg, rng, correlation=corr)
            d = standardize(Dataset(outcome=y, covariates=design, standardized=False))
            return _run_methods(d, cfg)
    except (DataError, NumericError, np.linalg.LinAlgError):
        return None


def run_scenario(cfg: ScenarioConfig, threads: int = 1) -> ScenarioReport:
    """Run all replicates and aggregate coverage, length, bias, and MSE.

    A replicate on which any method fails is excluded from the aggregates
    and counted in ``replicate_failures``; more than 5% failures aborts
    the scenario.  The report is deterministic in the configuration,
    independent of the thread count.
    """
    if threads < 1:
        raise DataError("threads must be >= 1")
    reps = cfg.replicates
    if threads == 1:
        results = [_one_replicate(cfg, r) for r in range(reps)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: _one_replicate(cfg, r), range(reps)))

    failures = sum(1 for r in results if r is None)
    if failures > MAX_FAILURE_FRACTION * reps:
        raise NumericError(
            f"{failures}/{reps} replicates failed (more than {MAX_FAILURE_FRACTION:.0%})"
        )

    tallies = {spec.label: _MethodTally() for spec in cfg.methods}
    for res in results:
        if res is None:
            continue
        for label, (point, lower, upper, v2n) in res.items():
            t = tallies[label]
            t.covers.append(1.0 if lower <= cfg.r2_true <= upper else 0.0)
            # reported length is that of the [0,1]-clamped interval
            t.lengths.append(max(min(upper, 1.0) - max(lower, 0.0), 0.0))
            t.points.append(point)
            t.v2s.append(v2n)

    used = reps - failures
    per_method: dict[str, MethodMetrics] = {}
    for label, t in tallies.items():
        k = len(t.points)
        if k == 0:
            raise NumericError(f"no successful replicates for method {label}")
        mean_point = math.fsum(t.points) / k
        bias = mean_point - cfg.r2_true
        emp_var = math.fsum((x - mean_point) ** 2 for x in t.points) / k
        mse = math.fsum((x - cfg.r2_true) ** 2 for x in t.points) / k
        mean_v2 = math.fsum(t.v2s) / k
        per_method[label] = MethodMetrics(
            coverage_rate=math.fsum(t.covers) / k,
            avg_ci_length=math.fsum(t.lengths) / k,
            bias=bias,
            mse=mse,
            mean_variance_estimate=mean_v2,
            empirical_variance=emp_var,
        )
    return ScenarioReport(config=cfg, per_method=per_method,
                          replicate_failures=failures, replicates_used=used)


# -- flat key-value scenario files ------------------------------------------

_REQUIRED_KEYS = ("n", "p", "r2_true", "replicates", "seed", "methods")
_OPTIONAL_KEYS = (
    "covariate_dist", "covariate_gamma", "error_dist", "error_gamma",
    "design", "design_a", "effect_pattern",
)


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse a flat ``key = value`` scenario document into a ScenarioConfig.

    Lines starting with '#' and blank lines are ignored.  ``methods`` is a
    comma- or space-separated list of estimator:variance:level triples.
    Unknown or malformed keys raise a DataError naming the key.
    """
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"scenario line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
            raise DataError(f"unknown scenario key {key!r}")
        if key in pairs:
            raise DataError(f"duplicate scenario key {key!r}")
        pairs[key] = value.split("#", 1)[0].strip()
    for key in _REQUIRED_KEYS:
        if key not in pairs:
            raise DataError(f"missing scenario key {key!r}")

    def _num(key: str, cast, default=None):
        if key not in pairs:
            return default
        try:
            return cast(pairs[key])
        except ValueError:
            raise DataError(f"scenario key {key!r}: cannot parse {pairs[key]!r}") from None

    cov_name = pairs.get("covariate_dist", "normal-power")
    if cov_name == "normal-power":
        covariate = NormalPower(_num("covariate_gamma", float, 1.0))
    elif cov_name == "chi-square-1":
        covariate = ChiSquare1()
    else:
        raise DataError(f"scenario key 'covariate_dist': unknown value {cov_name!r}")

    err_name = pairs.get("error_dist", "normal-power")
    if err_name == "normal-power":
        error = NormalPower(_num("error_gamma", float, 1.0))
    elif err_name == "exponential":
        error = Exponential()
    else:
        raise DataError(f"scenario key 'error_dist': unknown value {err_name!r}")

    design_name = pairs.get("design", "independent")
    if design_name == "independent":
        design: DesignKind = Independent()
    elif design_name == "correlated":
        design = Correlated(_num("design_a", float, 2.0))
    else:
        raise DataError(f"scenario key 'design': unknown value {design_name!r}")

    methods = []
    for token in pairs["methods"].replace(",", " ").split():
        parts = token.split(":")
        if len(parts) != 3:
            raise DataError(f"scenario key 'methods': bad entry {token!r} (want estimator:variance:level)")
        try:
            level = float(parts[2])
        except ValueError:
            raise DataError(f"scenario key 'methods': bad level in {token!r}") from None
        methods.append(MethodSpec(parts[0], parts[1], level))

    return ScenarioConfig(
        n=_num("n", int),
        p=_num("p", int),
        r2_true=_num("r2_true", float),
        covariate_dist=covariate,
        error_dist=error,
        design=design,
        effect_pattern=pairs.get("effect_pattern", "half-constant"),
        replicates=_num("replicates", int),
        seed=_num("seed", int),
        methods=tuple(methods),
    )


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Flat JSON-friendly echo of a configuration."""
    if isinstance(cfg.covariate_dist, ChiSquare1):
        cov = {"covariate_dist": "chi-square-1"}
    else:
        cov = {"covariate_dist": "normal-power", "covariate_gamma": cfg.covariate_dist.gamma}
    if isinstance(cfg.error_dist, Exponential):
        err = {"error_dist": "exponential"}
    else:
        err = {"error_dist": "normal-power", "error_gamma": cfg.error_dist.gamma}
    if isinstance(cfg.design, Correlated):
        design = {"design": "correlated", "design_a": cfg.design.a}
    else:
        design = {"design": "independent"}
    return {
        "n": cfg.n, "p": cfg.p, "r2_true": cfg.r2_true,
        **cov, **err, **design,
        "effect_pattern": cfg.effect_pattern,
        "replicates": cfg.replicates, "seed": cfg.seed,
        "methods": [m.label for m in cfg.methods],
    }


def report_to_dict(report: ScenarioReport) -> dict:
    return {
        "config": config_to_dict(report.config),
        "replicate_failures": report.replicate_failures,
        "replicates_used": report.replicates_used,
        "per_method": {
            label: {
                "coverage_rate": m.coverage_rate,
                "avg_ci_length": m.avg_ci_length,
                "bias": m.bias,
                "mse": m.mse,
                "mean_variance_estimate": m.mean_variance_estimate,
                "empirical_variance": m.empirical_variance,
            }
            for label, m in report.per_method.items()
        },
    }
