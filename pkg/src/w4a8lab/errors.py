"""Exception hierarchy shared by all modules."""


class W4A8Error(Exception):
    """Base class for every error raised by this package."""


class FormatError(W4A8Error, ValueError):
    """A serialized tensor or bundle could not be parsed."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class DTypeCodeError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass


class ValidationError(W4A8Error, ValueError):
    """Input values violate a documented invariant."""


class LayoutError(W4A8Error, ValueError):
    """Shape or alignment incompatible with the requested weight layout."""


class OverflowViolation(W4A8Error, ArithmeticError):
    """An 8-bit intermediate exceeded 255 (only reachable with invalid params)."""

    def __init__(self, message, lane=None):
        super().__init__(message)
        self.lane = lane


class AccumulatorRiskError(W4A8Error, ArithmeticError):
    """The reduction length could overflow a 32-bit accumulator."""


class TensorIOError(W4A8Error, OSError):
    """Writing to a byte sink failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
