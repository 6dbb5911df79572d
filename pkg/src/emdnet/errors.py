"""Exception hierarchy shared by every emdnet module."""


class EMDError(Exception):
    """Base class for all library errors."""


class ShapeError(EMDError, ValueError):
    """Tensor shapes or architecture dimensions disagree."""


class NumericError(EMDError, ArithmeticError):
    """A NaN or infinite value appeared where finite values are required."""


class DataError(EMDError, ValueError):
    """Corpus, partition or reference-sampling problem."""


class BlankImageError(DataError):
    """A target image has no ink pixels, so it cannot be loss-weighted."""


class FormatError(DataError):
    """Malformed file (PGM, checkpoint, manifest or config)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(EMDError, ValueError):
    """Invalid or unknown configuration key/value."""
