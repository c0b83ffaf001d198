"""Exception types shared across the package.

Two failure families are distinguished so the CLI can map them to exit
codes: bad inputs (files, shapes, option values) versus numerical
breakdown (degenerate spectra, non-convergent decompositions).
"""


class DataError(ValueError):
    """Invalid input data or configuration (CLI exit code 2)."""


class NumericError(RuntimeError):
    """Numerical failure: degenerate spectrum, non-convergence (CLI exit code 3)."""
