"""Data ingestion, standardization, and spectral preprocessing.

The estimators in this package act on a column-standardized covariate
matrix through its centered Gram matrix ``M = (1/p) Zc Zc'`` (``Zc`` the
column-centered covariates).  Building ``M`` and its eigendecomposition is
the single expensive step; everything downstream reuses the
:class:`SpectralGram` object.

Sample standard deviations use the n-1 denominator throughout.  With that
convention a standardized column satisfies ``sum(z**2) = n - 1``, hence
``tr(M) = n - 1`` for any standardized dataset.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError

MIN_ROWS = 4
INTERACTION_CAP = 20000

_MISSING_TOKENS = {"", "na", "nan"}


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Outcome vector plus covariate matrix.

    Parameters
    ----------
    outcome : ndarray, shape (n,)
    covariates : ndarray, shape (n, p)
    column_names : tuple of str, optional
        Covariate names; length p when given.
    standardized : bool
        True once every covariate column has sample mean 0 and sample
        standard deviation 1 (n-1 denominator).  Checked at construction.
    """

    outcome: np.ndarray
    covariates: np.ndarray
    column_names: tuple[str, ...] | None = None
    standardized: bool = False

    def __post_init__(self) -> None:
        y = _freeze(np.asarray(self.outcome, dtype=float).reshape(-1))
        x = _freeze(np.atleast_2d(np.asarray(self.covariates, dtype=float)))
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariates", x)
        n, p = x.shape
        if y.shape[0] != n:
            raise DataError(f"outcome has {y.shape[0]} rows but covariates have {n}")
        if n < MIN_ROWS:
            raise DataError(f"need at least {MIN_ROWS} rows, got {n}")
        if p < 1:
            raise DataError("need at least one covariate column")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DataError("non-finite entries in dataset")
        if self.column_names is not None:
            names = tuple(self.column_names)
            if len(names) != p:
                raise DataError(f"{len(names)} column names for {p} columns")
            object.__setattr__(self, "column_names", names)
        if self.standardized:
            mu = x.mean(axis=0)
            sd = x.std(axis=0, ddof=1)
            if np.any(np.abs(mu) > 1e-10) or np.any(np.abs(sd - 1.0) > 1e-8):
                raise DataError("standardized flag set but columns are not standardized")

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class SpectralGram:
    """Centered Gram matrix with its symmetric eigendecomposition.

    ``m = eigenvectors @ diag(eigenvalues) @ eigenvectors.T``; eigenvalues
    are stored in descending order and clamped at zero.  ``rank`` counts
    eigenvalues above ``max(n, p) * eps * max_eigenvalue``.  ``ratio_xi``
    is the aspect ratio n/p.
    """

    m: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank: int
    ratio_xi: float

    def __post_init__(self) -> None:
        m = _freeze(self.m)
        eig = _freeze(self.eigenvalues)
        vec = _freeze(self.eigenvectors)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "eigenvectors", vec)
        n = m.shape[0]
        if m.shape != (n, n) or vec.shape != (n, n) or eig.shape != (n,):
            raise DataError("inconsistent spectral shapes")
        if np.any(eig < 0):
            raise DataError("eigenvalues must be clamped at zero")
        if np.any(np.diff(eig) > 0):
            raise DataError("eigenvalues must be in descending order")

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @property
    def p(self) -> int:
        return int(round(self.n / self.ratio_xi))

    def reconstruction_error(self) -> float:
        """Max entrywise |m - U diag(eig) U'|, relative to the largest eigenvalue."""
        rebuilt = (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T
        scale = max(self.eigenvalues[0], 1.0)
        return float(np.abs(rebuilt - self.m).max() / scale)


@dataclass(frozen=True)
class CorrelationModel:
    """Correlation matrix and its (floored) inverse square root."""

    correlation: np.ndarray
    inverse_sqrt: np.ndarray
    eigenvalue_floor: float

    def __post_init__(self) -> None:
        c = _freeze(self.correlation)
        s = _freeze(self.inverse_sqrt)
        object.__setattr__(self, "correlation", c)
        object.__setattr__(self, "inverse_sqrt", s)
        p = c.shape[0]
        if c.shape != (p, p) or s.shape != (p, p):
            raise DataError("correlation matrices must be square and same size")
        if np.any(np.abs(np.diag(c) - 1.0) > 1e-10):
            raise DataError("correlation diagonal must be 1")
        # On the well-conditioned subspace, S C S must be the identity.
        eig, vec = np.linalg.eigh(c)
        keep = eig > self.eigenvalue_floor
        if np.any(keep):
            v = vec[:, keep]
            gap = np.abs(v.T @ s @ c @ s @ v - np.eye(int(keep.sum()))).max()
            if gap > 1e-6:
                raise DataError(f"inverse_sqrt check failed (max deviation {gap:.2e})")

    @property
    def p(self) -> int:
        return self.correlation.shape[0]


def _column_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x.mean(axis=0), x.std(axis=0, ddof=1)


def load_csv(path: str, outcome_column: str | int) -> Dataset:
    """Read a delimited text file with one header row into a Dataset.

    The outcome column is selected by header name, or by 0-based index when
    ``outcome_column`` is an int (or a string not matching any header that
    parses as an int).  Cells must be plain finite numbers; "NA", "NaN" and
    empty cells are rejected with the offending row/column named.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    ncol = len(header)
    if isinstance(outcome_column, int):
        idx = outcome_column
    elif outcome_column in header:
        idx = header.index(outcome_column)
    else:
        try:
            idx = int(outcome_column)
        except ValueError:
            raise DataError(f"outcome column {outcome_column!r} not in header {header}") from None
    if not 0 <= idx < ncol:
        raise DataError(f"outcome column index {idx} out of range for {ncol} columns")

    data = np.empty((len(rows) - 1, ncol))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != ncol:
            raise DataError(f"row {i}: expected {ncol} cells, found {len(row)}")
        for j, cell in enumerate(row):
            text = cell.strip()
            if text.lower() in _MISSING_TOKENS:
                raise DataError(f"missing value at row {i}, column {header[j]!r}")
            try:
                value = float(text)
            except ValueError:
                raise DataError(
                    f"non-numeric cell {text!r} at row {i}, column {header[j]!r}"
                ) from None
            if not np.isfinite(value):
                raise DataError(f"non-finite value at row {i}, column {header[j]!r}")
            data[i - 2, j] = value

    if data.shape[0] < MIN_ROWS:
        raise DataError(f"need at least {MIN_ROWS} data rows, got {data.shape[0]}")
    keep = [j for j in range(ncol) if j != idx]
    return Dataset(
        outcome=data[:, idx],
        covariates=data[:, keep],
        column_names=tuple(header[j] for j in keep),
        standardized=False,
    )


def standardize(d: Dataset) -> Dataset:
    """Center and scale every covariate column to mean 0, sample sd 1.

    Idempotent; the outcome is left untouched.  A constant column (sd = 0)
    is an error.
    """
    mu, sd = _column_stats(d.covariates)
    bad = np.flatnonzero(sd <= 0)
    if bad.size:
        name = d.column_names[bad[0]] if d.column_names else f"#{bad[0]}"
        raise DataError(f"constant covariate column {name}: cannot standardize")
    z = (d.covariates - mu) / sd
    return Dataset(d.outcome, z, d.column_names, standardized=True)


def centered_gram(d: Dataset) -> SpectralGram:
    """Build ``M = (1/p) Zc Zc'`` and its full eigendecomposition.

    Requires a standardized dataset.  Eigenvalues are clamped at zero and
    sorted in descending order; the numerical rank uses the tolerance
    ``max(n, p) * eps * max_eigenvalue``.
    """
    if not d.standardized:
        raise DataError("centered_gram requires a standardized dataset")
    n, p = d.n, d.p
    zc = d.covariates - d.covariates.mean(axis=0)
    m = (zc @ zc.T) / p
    m = (m + m.T) / 2.0
    try:
        eig, vec = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(eig)[::-1]
    eig = eig[order]
    vec = vec[:, order]
    if eig.size and eig[0] > 0 and eig[-1] < -1e-8 * eig[0]:
        raise NumericError("Gram matrix has a significantly negative eigenvalue")
    eig = np.clip(eig, 0.0, None)
    tol = max(n, p) * np.finfo(float).eps * (eig[0] if eig.size else 0.0)
    rank = int((eig > tol).sum())
    return SpectralGram(m=m, eigenvalues=eig, eigenvectors=vec, rank=rank, ratio_xi=n / p)


def decorrelate(d: Dataset, c: CorrelationModel) -> Dataset:
    """Apply the inverse-square-root transform ``X -> X @ C^{-1/2}`` and re-standardize."""
    if c.p != d.p:
        raise DataError(f"correlation is {c.p}x{c.p} but dataset has p={d.p}")
    z = d.covariates @ c.inverse_sqrt
    return standardize(Dataset(d.outcome, z, d.column_names, standardized=False))


def estimate_correlation(d: Dataset, floor: float | None = None) -> CorrelationModel:
    """Sample correlation matrix with a floored inverse square root.

    Only valid when n > p (otherwise the sample correlation is singular by
    construction; use the spectral-weight estimator instead).  Eigenvalues
    below ``floor`` (default ``1e-2 * max_eigenvalue``) are raised to the
    floor before inverting, with a warning.  The floor keeps near-null
    directions of ill-conditioned correlation estimates from being blown
    up by the inverse square root; raise or lower it to trade off
    decorrelation fidelity against noise amplification.
    """
    if d.n <= d.p:
        raise DataError(
            f"estimate_correlation needs n > p (got n={d.n}, p={d.p}); "
            "use the spectral-weight estimator for wide designs"
        )
    x = d.covariates
    sd = x.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise DataError("constant covariate column: correlation undefined")
    if d.p == 1:
        corr = np.array([[1.0]])
    else:
        corr = np.corrcoef(x, rowvar=False)
        corr = (corr + corr.T) / 2.0
        np.fill_diagonal(corr, 1.0)
    eig, vec = np.linalg.eigh(corr)
    if floor is None:
        floor = 1e-2 * float(eig[-1])
    if np.any(eig < floor):
        warnings.warn(
            f"correlation matrix near-singular: {int((eig < floor).sum())} "
            f"eigenvalue(s) raised to floor {floor:.3e}",
            stacklevel=2,
        )
    eig_floored = np.maximum(eig, floor)
    inv_sqrt = (vec / np.sqrt(eig_floored)) @ vec.T
    inv_sqrt = (inv_sqrt + inv_sqrt.T) / 2.0
    return CorrelationModel(correlation=corr, inverse_sqrt=inv_sqrt, eigenvalue_floor=floor)


def expand_interactions(d: Dataset, cap: int = INTERACTION_CAP) -> Dataset:
    """Augment the covariates with all pairwise products of distinct columns.

    Products X_j * X_k (j < k) are formed on the raw scale and named
    "xj:xk"; squares are not added.  The expanded matrix is then
    standardized.  Raises when the expanded width p + p(p-1)/2 exceeds
    ``cap``.
    """
    p = d.p
    p_new = p + p * (p - 1) // 2
    if p_new > cap:
        raise DataError(f"interaction expansion gives p={p_new}, above the cap {cap}")
    names = d.column_names or tuple(f"x{j}" for j in range(p))
    x = d.covariates
    cols = [x]
    new_names = list(names)
    for j, k in itertools.combinations(range(p), 2):
        cols.append((x[:, j] * x[:, k])[:, None])
        new_names.append(f"{names[j]}:{names[k]}")
    expanded = np.hstack(cols)
    return standardize(Dataset(d.outcome, expanded, tuple(new_names), standardized=False))


def standardize_outcome(y: np.ndarray) -> np.ndarray:
    """Outcome centered and scaled to unit sample variance (n-1 denominator)."""
    y = np.asarray(y, dtype=float)
    sd = y.std(ddof=1)
    if sd <= 0:
        raise DataError("constant outcome: cannot standardize")
    return (y - y.mean()) / sd
