"""Exception types shared across the package."""


class SurpscaleError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(SurpscaleError, ValueError):
    """An argument violates a documented precondition."""


class CorruptArchiveError(SurpscaleError):
    """A logit archive failed validation (bad magic, truncation, bounds).

    `byte_offset` locates the first offending byte when known.
    """

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class TableFormatError(SurpscaleError):
    """A word or reading-time table failed to parse or validate.

    `line` is the 1-based line number of the offending record.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class RankError(SurpscaleError):
    """Fixed-effects design matrix is rank deficient."""


class DegenerateDataError(SurpscaleError):
    """The response carries no variance; the model likelihood is undefined."""


class NotConvergedError(SurpscaleError):
    """A quantity was requested from a fit that did not converge."""


class InvalidComparisonError(SurpscaleError):
    """Two fits are not comparable (different n or different response)."""


class NumericalError(SurpscaleError):
    """A numerical operation failed (e.g. non-positive-definite covariance)."""
