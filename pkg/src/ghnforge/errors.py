"""Error taxonomy shared by every module.

The CLI maps these onto exit codes: ConfigError -> 2, DataError/ParseError -> 3,
NumericError -> 4. Everything else is a plain crash (exit 1).
"""

from __future__ import annotations


class GhnforgeError(Exception):
    """Base class for all library errors."""


class ShapeError(GhnforgeError):
    """An operand dimension does not fit the operation's contract."""


class NumericError(GhnforgeError):
    """NaN/Inf reached a check barrier, or an optimization diverged."""


class Rejected(GhnforgeError):
    """A sampled genotype produced an invalid graph; caller should resample."""


class ParseError(GhnforgeError):
    """A serialized record could not be decoded.

    Carries the byte/char offset when known so callers can point at the
    offending position.
    """

    def __init__(self, message: str, offset: int | None = None):
        self.message = message
        self.offset = offset
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)


class ConfigError(GhnforgeError):
    """A config file or option set is invalid."""


class DataError(GhnforgeError):
    """A data file is missing, truncated, or inconsistent."""
