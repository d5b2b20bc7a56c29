"""Exception hierarchy shared by all txv modules."""


class TxvError(Exception):
    """Base class for all txv errors."""


class DimensionError(TxvError):
    """Shapes of the operands do not agree."""


class NumericalError(TxvError):
    """A non-finite value appeared where a finite one is required."""


class EmptyInputError(TxvError):
    """An operation that needs at least one element got none."""


class MissingItemError(TxvError):
    """An id was looked up in a bank that does not contain it."""


class FormatError(TxvError):
    """An on-disk artifact failed validation.

    ``offset`` carries the byte offset of the offending field when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(TxvError):
    """A configuration value is invalid or inconsistent."""


class BatchTooSmallError(TxvError):
    """Hard-negative mining needs at least two pairs in a batch."""


class InvalidBatchError(TxvError):
    """A training batch violates the unique-video-id requirement."""


class FusionError(TxvError):
    """Ranked lists being fused do not share the same item universe."""


class EvalError(TxvError):
    """Ground truth or ranked lists are unsuitable for evaluation."""
