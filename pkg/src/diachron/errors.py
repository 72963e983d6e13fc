"""Exception hierarchy.

Split along the CLI exit-code boundary: ``UsageError`` -> 1,
``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class DiachronError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(DiachronError):
    """Bad command line or contradictory configuration."""


class DataError(DiachronError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A dataset line failed to parse; message carries the line number."""


class OutOfSpanError(DataError):
    """Timestamp outside the dataset/model timespan without explicit clamping."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible checkpoint."""


class NumericalError(DiachronError):
    """A numerical computation failed or degenerated."""


class NearZeroNormError(NumericalError):
    """Vector norm below the zero guard; normalization undefined."""


class ConvergenceError(NumericalError):
    """Iterative routine hit its iteration cap without converging."""
