"""Point estimators for the proportion of explained variation.

Two weighting schemes are implemented.  The ridge-spectral weight

    W_lam = (I + lam*M)^{-1} (M - I) (I + lam*M)^{-1}

commutes with M, so it is never materialized: every functional of W_lam is
evaluated through the eigenvalues ``w_k = (eta_k - 1) / (1 + lam*eta_k)**2``
of the shared :class:`~explvar.data.SpectralGram`.  The least-squares
weight is the residual projector of the regression of Y on the covariates
plus an intercept; it needs n to exceed the design rank and works on raw
covariates directly.

The estimator solves a single moment equation in r^2, giving the ratio

    r2_hat = tr[W {YY'/var(Y) - G}] / tr[W {M - G}],     G = I - 11'/n.

Raw estimates may fall outside [0, 1]; both the raw value and the clamped
value are reported, and the signal/noise variance split uses the clamped
one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import qr as pivoted_qr

from .data import Dataset, SpectralGram
from .errors import DataError, NumericError

DEGENERATE_MESSAGE = "degenerate design: weighted spectrum indistinguishable from identity"

DEFAULT_LAMBDA0 = 0.1
DEFAULT_ITERATIONS = 5

# Clamp applied to iterates of the lambda update r2/(1-r2) only; the update
# diverges at r2 -> 1 and is negative below 0.
_ITERATE_CLAMP = 0.999


@dataclass(frozen=True)
class RidgeSpectral:
    """Spectral weight W_lam with a fixed-point policy for lambda."""

    lam: float = DEFAULT_LAMBDA0
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam) or self.lam < 0:
            raise DataError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.iterations < 0:
            raise DataError("iterations must be >= 0")


@dataclass(frozen=True)
class LeastSquares:
    """Residual-projector weight; requires n > rank(design) + 1."""


WeightScheme = Union[RidgeSpectral, LeastSquares]


@dataclass(frozen=True)
class WeightDiagnostics:
    """Normalized trace functionals of the weight matrix, reused by the variance estimators."""

    tr_w2_over_n: float
    tr_w2m_over_n: float
    sum_wii2_over_n: float


@dataclass(frozen=True)
class ExplainedVariationEstimate:
    r2: float
    r2_clamped: float
    sigma_s2: float
    sigma_eps2: float
    sigma_y2: float
    lambda_final: float
    denominator_c: float
    weight_diagnostics: WeightDiagnostics


@dataclass(frozen=True)
class ResidualProjector:
    """Factorization of the least-squares residual space.

    ``fitted_basis`` holds orthonormal columns spanning the intercept plus
    the covariate column space, so W_* = I - Q Q'.  ``rank`` is the rank of
    the column-centered covariates; the residual space has dimension
    n - 1 - rank.
    """

    n: int
    rank: int
    fitted_basis: np.ndarray

    @property
    def residual_dim(self) -> int:
        return self.n - 1 - self.rank

    def diagonal(self) -> np.ndarray:
        """Diagonal of the residual projector W_*."""
        return 1.0 - (self.fitted_basis**2).sum(axis=1)

    def matrix(self) -> np.ndarray:
        """Dense W_* = I - Q Q'."""
        q = self.fitted_basis
        return np.eye(self.n) - q @ q.T

    def residual_basis(self) -> np.ndarray:
        """Orthonormal basis U* of the residual space, n x (n-1-rank).

        Any orthonormal basis of the eigenvalue-1 eigenspace of W_*
        reproduces the projector, but fourth-power statistics built from
        the basis are basis-dependent: a generic (delocalized) basis
        Gaussianizes the projected errors and erases their kurtosis, so
        the basis is fixed as the maximally coordinate-aligned one,
        computed by column-pivoted QR of W_*.  That keeps per-observation
        fourth-moment information in U*'y and makes the choice
        deterministic; each vector is signed so its largest-magnitude
        entry is positive.
        """
        m = self.residual_dim
        q, _, _ = pivoted_qr(self.matrix(), pivoting=True)
        u = q[:, :m]
        flips = np.sign(u[np.abs(u).argmax(axis=0), np.arange(m)])
        flips[flips == 0] = 1.0
        return u * flips


def weight_eigenvalues(g: SpectralGram, lam: float) -> np.ndarray:
    """Eigenvalues ``(eta - 1) / (1 + lam*eta)**2`` of the spectral weight."""
    if lam < 0:
        raise DataError(f"lambda must be >= 0, got {lam}")
    eta = g.eigenvalues
    return (eta - 1.0) / (1.0 + lam * eta) ** 2


def weight_diagonals(g: SpectralGram, lam: float) -> np.ndarray:
    """Diagonal entries W_ii = sum_k U_ik^2 w_k, without forming W."""
    w = weight_eigenvalues(g, lam)
    return (g.eigenvectors**2) @ w


def _diagnostics(g: SpectralGram, w: np.ndarray) -> WeightDiagnostics:
    n = g.n
    wii = (g.eigenvectors**2) @ w
    return WeightDiagnostics(
        tr_w2_over_n=float((w**2).sum() / n),
        tr_w2m_over_n=float((w**2 * g.eigenvalues).sum() / n),
        sum_wii2_over_n=float((wii**2).sum() / n),
    )


def _assemble(r2: float, sigma_y2: float, lambda_final: float,
              denominator_c: float, diag: WeightDiagnostics) -> ExplainedVariationEstimate:
    r2c = min(1.0, max(0.0, r2))
    return ExplainedVariationEstimate(
        r2=float(r2),
        r2_clamped=r2c,
        sigma_s2=r2c * sigma_y2,
        sigma_eps2=(1.0 - r2c) * sigma_y2,
        sigma_y2=float(sigma_y2),
        lambda_final=lambda_final,
        denominator_c=float(denominator_c),
        weight_diagnostics=diag,
    )


def estimate_r2_weighted(d: Dataset, g: SpectralGram, lam: float) -> ExplainedVariationEstimate:
    """Explained variation under the spectral weight at a fixed lambda.

    Both traces against the centering projector G = I - 11'/n are computed
    spectrally: tr(W G) = tr(W) - 1'W1/n with 1'W1 = sum_k w_k (u_k'1)^2.
    """
    if not d.standardized:
        raise DataError("estimate_r2_weighted requires a standardized dataset")
    if d.n != g.n:
        raise DataError("dataset and gram have different n")
    n = d.n
    y = d.outcome
    sigma_y2 = float(y.var(ddof=1))
    if sigma_y2 <= 0:
        raise DataError("constant outcome")
    w = weight_eigenvalues(g, lam)
    eta = g.eigenvalues
    u = g.eigenvectors
    a = u.T @ (y - y.mean())
    s = u.T @ np.ones(n)
    tr_w_g = w.sum() - (w * s**2).sum() / n
    num = (w * a**2).sum() / sigma_y2 - tr_w_g
    den = (w * eta).sum() - tr_w_g
    if abs(den) < 1e-10 * n:
        raise NumericError(DEGENERATE_MESSAGE)
    c = float((w * (eta - 1.0)).sum() / n)
    return _assemble(num / den, sigma_y2, float(lam), c, _diagnostics(g, w))


def iterate_lambda(d: Dataset, g: SpectralGram, lambda0: float = DEFAULT_LAMBDA0,
                   iterations: int = DEFAULT_ITERATIONS) -> ExplainedVariationEstimate:
    """Fixed-point refinement of lambda via ``lam <- r2/(1 - r2)``.

    Starts at ``lambda0``; each iteration re-estimates r^2 and maps it
    through the update with the estimate clamped into [0, 0.999] first.
    ``iterations=0`` reduces to :func:`estimate_r2_weighted` at lambda0.
    The returned ``lambda_final`` is the lambda of the last estimate.
    """
    if iterations < 0:
        raise DataError("iterations must be >= 0")
    lam = float(lambda0)
    est = estimate_r2_weighted(d, g, lam)
    for _ in range(iterations):
        r2c = min(max(est.r2, 0.0), _ITERATE_CLAMP)
        lam = r2c / (1.0 - r2c)
        est = estimate_r2_weighted(d, g, lam)
    return est


def ls_projector(d: Dataset) -> ResidualProjector:
    """Orthonormal factorization of the span of [1, X] via SVD of the centered covariates."""
    n = d.n
    x = d.covariates
    xc = x - x.mean(axis=0)
    u, sv, _ = np.linalg.svd(xc, full_matrices=False)
    tol = max(n, d.p) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int((sv > tol).sum())
    q = np.hstack([np.full((n, 1), 1.0 / math.sqrt(n)), u[:, :rank]])
    return ResidualProjector(n=n, rank=rank, fitted_basis=q)


def estimate_r2_ls(d: Dataset, projector: ResidualProjector | None = None) -> ExplainedVariationEstimate:
    """Least-squares explained variation, 1 - RSS / (var(Y) * residual_dim).

    Works on the covariates as given (no decorrelation needed) and
    tolerates rank-deficient designs through the pseudo-inverse projector.
    Requires n > rank + 1 so the residual space is nonempty.
    """
    proj = ls_projector(d) if projector is None else projector
    if proj.n != d.n:
        raise DataError("projector built for a different dataset")
    m = proj.residual_dim
    if m < 1:
        raise DataError(
            f"least-squares path needs n > rank + 1 (n={d.n}, rank={proj.rank}); "
            "use the spectral-weight estimator"
        )
    y = d.outcome
    sigma_y2 = float(y.var(ddof=1))
    if sigma_y2 <= 0:
        raise DataError("constant outcome")
    resid = y - proj.fitted_basis @ (proj.fitted_basis.T @ y)
    rss = float(resid @ resid)
    r2 = 1.0 - rss / (sigma_y2 * m)
    # W_* is idempotent and annihilates the design, so tr(W^2) = tr(W) = m
    # and tr(W^2 M) = 0 for the Gram built from these covariates.
    wii = proj.diagonal()
    diag = WeightDiagnostics(
        tr_w2_over_n=m / proj.n,
        tr_w2m_over_n=0.0,
        sum_wii2_over_n=float((wii**2).sum() / proj.n),
    )
    return _assemble(r2, sigma_y2, float("nan"), -m / proj.n, diag)
