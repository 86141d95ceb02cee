"""Error taxonomy shared across the package.

UsageError, DataError, and NumericalError map to CLI exit codes 1, 2, 3.
"""


class UsageError(ValueError):
    """Bad flags or arguments."""


class DataError(ValueError):
    """Malformed or inconsistent data on disk."""


class NumericalError(RuntimeError):
    """Non-finite values or failed numerical contracts during a run."""


class LayoutError(ValueError):
    """A document spec does not fit the target canvas."""
