"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, rows, archives, ledgers)."""


class ArchiveError(DataError):
    """Weight-archive specific failure (bad magic, version, truncation, layout)."""


class NumericError(ArithmeticError):
    """Numeric contract violation: shape mismatch or non-finite values."""
