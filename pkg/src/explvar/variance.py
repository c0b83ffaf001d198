"""Variance estimators and confidence intervals for the explained variation.

Three variance estimates are available for the spectral-weight estimator:

* null-case      -- valid only under the no-signal hypothesis;
* normal-error   -- consistent when the residual errors are Gaussian;
* robust         -- consistent without a normality assumption, obtained by
                    replacing the Gaussian fourth-moment terms with
                    empirical ones.

All trace functionals are evaluated through the eigenvalues of the Gram
matrix; the common denominator is ``C = tr{W (M - I)} / n``.  The spread
constant ``tau^2`` is the variance of ``phi(x) = x(x-1)/(1+lam*x)^2`` over
the nonzero Gram eigenvalues (zero-padded to p entries), and its
population analogue integrates phi against the Marchenko-Pastur law for
aspect ratio xi = n/p.

The least-squares estimator has its own pair of variance estimates plus an
exact chi-square pivot interval valid under Gaussian errors.

Outcome-dependent estimators expect the outcome standardized to mean 0 and
unit sample variance (see :func:`explvar.data.standardize_outcome`): the
formulas compare Y_i^2 against 1.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .data import SpectralGram
from .errors import DataError, NumericError
from .estimator import (
    DEGENERATE_MESSAGE,
    ExplainedVariationEstimate,
    ResidualProjector,
    weight_eigenvalues,
)


class VarianceMethod(enum.Enum):
    NULL_CASE = "null"
    NORMAL_ERROR = "normal"
    ROBUST = "robust"


@dataclass(frozen=True)
class IntervalReport:
    """Point estimate with a variance estimate and clamped confidence bounds.

    ``variance_of_sqrt_n`` estimates the variance v^2 of sqrt(n) * (r2_hat
    - r2); the interval half-width is z * sqrt(v^2 / n).  Interval
    endpoints are clamped to [0, 1]; the raw point estimate may fall
    outside them.  The signal/noise variance intervals scale the r^2
    endpoints by the outcome variance.
    """

    r2_point: float
    variance_of_sqrt_n: float
    method: VarianceMethod
    level: float
    lower: float
    upper: float
    sigma_s2_interval: tuple[float, float]
    sigma_eps2_interval: tuple[float, float]


@dataclass(frozen=True)
class MpLaw:
    """Marchenko-Pastur law for aspect ratio xi = n/p.

    The continuous part lives on [(1-sqrt(xi))^2, (1+sqrt(xi))^2] with
    density sqrt((b-x)(x-a)) / (2 pi xi x) and total mass min(1, 1/xi);
    for xi > 1 the remaining mass 1 - 1/xi sits in an atom at zero, which
    is exposed separately and never integrated.
    """

    xi: float
    support_lower: float
    support_upper: float
    point_mass_at_zero: float

    @classmethod
    def for_ratio(cls, xi: float) -> "MpLaw":
        if not (0 < xi < math.inf):
            raise DataError(f"aspect ratio must be in (0, inf), got {xi}")
        root = math.sqrt(xi)
        return cls(
            xi=xi,
            support_lower=(1.0 - root) ** 2,
            support_upper=(1.0 + root) ** 2,
            point_mass_at_zero=max(0.0, 1.0 - 1.0 / xi),
        )

    @property
    def continuous_mass(self) -> float:
        return min(1.0, 1.0 / self.xi)

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = (x > self.support_lower) & (x < self.support_upper)
        out = np.zeros_like(x)
        xs = x[inside]
        out[inside] = np.sqrt((self.support_upper - xs) * (xs - self.support_lower)) / (
            2.0 * np.pi * self.xi * xs
        )
        return out

    def integrate(self, f) -> float:
        """Integral of f against the continuous part, to absolute accuracy ~1e-8.

        Uses the substitution x = a + (b-a) sin^2(t), which absorbs both
        square-root edge singularities and the 1/x pole when a = 0.
        """
        a, b = self.support_lower, self.support_upper
        span = b - a

        def h(t: float) -> float:
            st, ct = math.sin(t), math.cos(t)
            x = a + span * st * st
            return f(x) * (span * span * st * st * ct * ct) / (math.pi * self.xi * x)

        value, err = integrate.quad(h, 0.0, math.pi / 2.0, epsabs=1e-10, epsrel=1e-10, limit=200)
        if not math.isfinite(value) or err > 1e-6:
            raise NumericError(f"Marchenko-Pastur quadrature did not converge (err={err:.2e})")
        return value


def _nonzero_phi(g: SpectralGram, lam: float) -> np.ndarray:
    """phi over the eigenvalues above the rank tolerance, at most min(n, p) of them."""
    eta = g.eigenvalues[: min(g.rank, min(g.n, g.p))]
    return eta * (eta - 1.0) / (1.0 + lam * eta) ** 2


def tau2_hat(g: SpectralGram, lam: float) -> float:
    """Empirical spread of phi(eta) over the nonzero Gram eigenvalues.

    The variance form divides by p regardless of how many eigenvalues are
    nonzero; since phi(0) = 0, that equals the population variance of the
    phi values zero-padded to length p, which keeps the result
    nonnegative by construction.
    """
    if lam < 0:
        raise DataError(f"lambda must be >= 0, got {lam}")
    phi = _nonzero_phi(g, lam)
    padded = np.zeros(g.p)
    padded[: phi.size] = phi
    return float(padded.var())


def mp_tau2_theoretical(xi: float, lam: float) -> float:
    """Limiting value of tau^2: Var of phi under the Marchenko-Pastur law.

    Integrates phi and phi^2 against the continuous part of the law; for
    xi > 1 the atom at zero is excluded (phi(0) = 0, so only the
    normalization of the squared-mean term is affected by that choice).
    """
    if lam < 0:
        raise DataError(f"lambda must be >= 0, got {lam}")
    law = MpLaw.for_ratio(xi)

    def phi(x: float) -> float:
        return x * (x - 1.0) / (1.0 + lam * x) ** 2

    m1 = law.integrate(phi)
    m2 = law.integrate(lambda x: phi(x) ** 2)
    return m2 - m1 * m1


def _denominator(g: SpectralGram, w: np.ndarray) -> float:
    c = float((w * (g.eigenvalues - 1.0)).sum() / g.n)
    if abs(c) < 1e-10:
        raise NumericError(DEGENERATE_MESSAGE)
    return c


def var_null(g: SpectralGram, y: np.ndarray, lam: float) -> float:
    """Variance estimate valid under the no-signal hypothesis.

    ``y`` must be standardized (the caller's assertion that the signal is
    zero makes Y_i^2 - 1 a pure noise moment).
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] != g.n:
        raise DataError("outcome length does not match gram")
    n = g.n
    w = weight_eigenvalues(g, lam)
    c = _denominator(g, w)
    wii = (g.eigenvectors**2) @ w
    tr_w2 = float((w**2).sum())
    sum_wii2 = float((wii**2).sum())
    second = float((wii**2 * (y**2 - 1.0) ** 2).sum() / n)
    return ((2.0 / n) * (tr_w2 - sum_wii2) + second) / c**2


def var_normal_error(est: ExplainedVariationEstimate, g: SpectralGram, lam: float) -> float:
    """Variance estimate assuming Gaussian residual errors.

    Combines the tau^2 term, the signal-noise cross term and the pure
    noise term, all normalized by C^2.  Uses the raw (unclamped) r^2.
    """
    n, p = g.n, g.p
    w = weight_eigenvalues(g, lam)
    c = _denominator(g, w)
    r2 = est.r2
    t2 = tau2_hat(g, lam)
    tr_w2 = float((w**2).sum())
    tr_w2m = float((w**2 * g.eigenvalues).sum())
    num = (
        2.0 * r2**2 * t2 * p / n
        + 4.0 * r2 * (1.0 - r2) * tr_w2m / n
        + 2.0 * (1.0 - r2) ** 2 * tr_w2 / n
    )
    return num / c**2


def var_robust(est: ExplainedVariationEstimate, g: SpectralGram, y: np.ndarray,
               lam: float) -> float:
    """Variance estimate without the error-normality assumption.

    Starts from the normal-error value, removes its Gaussian
    diagonal-fourth-moment content, and adds the empirical counterpart
    (truncated below at zero).  ``y`` must be standardized.  A negative
    total is floored at zero with a warning.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] != g.n:
        raise DataError("outcome length does not match gram")
    n = g.n
    w = weight_eigenvalues(g, lam)
    c = _denominator(g, w)
    r2 = est.r2
    wii = (g.eigenvectors**2) @ w
    sum_wii2_over_n = float((wii**2).sum() / n)
    base = var_normal_error(est, g, lam)
    m_diag = g.m.diagonal()
    fourth = float(((y**2 - 1.0 - (m_diag - 1.0) * r2) ** 2).mean())
    va = (fourth - 4.0 * r2 * (1.0 - r2) - 2.0 * r2**2) / c**2 * sum_wii2_over_n
    total = base - 2.0 * (1.0 - r2) ** 2 * sum_wii2_over_n / c**2 + max(va, 0.0)
    if total < 0.0:
        warnings.warn("robust variance fell below zero; floored at 0", stacklevel=2)
        return 0.0
    return total


def var_ls(est: ExplainedVariationEstimate, projector: ResidualProjector,
           y: np.ndarray, robust: bool) -> float:
    """Variance estimates for the least-squares estimator.

    With ``robust=False`` this is ``2n/m * (1 - r2)^2`` (Gaussian errors),
    m the residual dimension.  The robust version replaces the Gaussian
    fourth moment with an empirical one computed through a fixed
    orthonormal basis of the residual space; ``y`` must be standardized
    for that path.
    """
    n = projector.n
    m = projector.residual_dim
    if m < 1:
        raise DataError("least-squares variance needs n > rank + 1")
    r2 = est.r2
    if not robust:
        return 2.0 * n / m * (1.0 - r2) ** 2
    y = np.asarray(y, dtype=float)
    if y.shape[0] != n:
        raise DataError("outcome length does not match projector")
    u_star = projector.residual_basis()
    proj_y = u_star.T @ y
    fourth_sum = float((proj_y**4).sum())
    quartic_entries = float((u_star**4).sum())
    bracket = (fourth_sum - 3.0 * m * (1.0 - r2) ** 2) / quartic_entries + 2.0 * (1.0 - r2) ** 2
    return 2.0 * (n - m) * (1.0 - r2) ** 2 / m + max(bracket, 0.0)


def chi_square_quantile(prob: float, df: float) -> float:
    """Chi-square quantile via the inverse regularized incomplete gamma function."""
    if not 0.0 < prob < 1.0:
        raise DataError(f"quantile probability must be in (0,1), got {prob}")
    return float(2.0 * special.gammaincinv(df / 2.0, prob))


def chi_square_bounds_raw(r2_star: float, n: int, p: int, level: float) -> tuple[float, float]:
    """Chi-square pivot bounds before clamping, ordered ascending."""
    if n <= p + 1:
        raise DataError(f"chi-square interval needs n > p + 1 (n={n}, p={p})")
    if not 0.0 < level < 1.0:
        raise DataError(f"level must be in (0,1), got {level}")
    df = n - p - 1
    alpha = 1.0 - level
    q_lo = chi_square_quantile(alpha / 2.0, df)
    q_hi = chi_square_quantile(1.0 - alpha / 2.0, df)
    bounds = sorted((1.0 - (1.0 - r2_star) / (q_lo / df), 1.0 - (1.0 - r2_star) / (q_hi / df)))
    return bounds[0], bounds[1]


def chi_square_interval(r2_star: float, n: int, p: int, level: float) -> tuple[float, float]:
    """Exact pivot interval for the least-squares estimator under Gaussian errors.

    Based on the chi-square distribution of the residual sum of squares
    with n - p - 1 degrees of freedom.  Endpoints are ordered then clamped
    to [0, 1].
    """
    lo, hi = chi_square_bounds_raw(r2_star, n, p, level)
    return (min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0))


def normal_margin(v2: float, n: int, level: float) -> float:
    """Half-width ``z_{(1+level)/2} * sqrt(v2 / n)`` of the normal-approximation interval."""
    if v2 < 0:
        raise DataError(f"variance must be >= 0, got {v2}")
    if not 0.0 < level < 1.0:
        raise DataError(f"level must be in (0,1), got {level}")
    z = float(special.ndtri(0.5 + level / 2.0))
    return z * math.sqrt(v2 / n)


def normal_interval(est: ExplainedVariationEstimate, v2: float, n: int, level: float,
                    method: VarianceMethod = VarianceMethod.ROBUST) -> IntervalReport:
    """Normal-approximation interval ``r2 +- z * sqrt(v2 / n)``, clamped to [0, 1].

    The signal and noise variance intervals scale the clamped r^2
    endpoints by the estimated outcome variance, treating it as a fixed
    multiplier.
    """
    margin = normal_margin(v2, n, level)
    lower = min(max(est.r2 - margin, 0.0), 1.0)
    upper = min(max(est.r2 + margin, 0.0), 1.0)
    s2y = est.sigma_y2
    return IntervalReport(
        r2_point=est.r2,
        variance_of_sqrt_n=float(v2),
        method=method,
        level=level,
        lower=lower,
        upper=upper,
        sigma_s2_interval=(s2y * lower, s2y * upper),
        sigma_eps2_interval=(s2y * (1.0 - upper), s2y * (1.0 - lower)),
    )
