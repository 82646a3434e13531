"""Exception types shared across the package."""


class TalunetError(Exception):
    """Base class for every error raised by talunet."""


class ShapeError(TalunetError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TalunetError, ValueError):
    """A call violated an operation's precondition."""


class DataError(TalunetError, ValueError):
    """Dataset contents are invalid (bad labels, empty, oversubscribed)."""


class FormatError(DataError):
    """A dataset file has the wrong magic number or header."""


class LengthError(DataError):
    """A dataset file is truncated or has the wrong size."""


class UsageError(TalunetError, ValueError):
    """Bad command-line flag or configuration key."""
