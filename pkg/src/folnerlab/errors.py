"""Exception hierarchy shared by all modules."""


class FolnerLabError(Exception):
    """Base class for library errors."""


class ModelMismatchError(FolnerLabError, ValueError):
    """Two operands live in different group models."""


class EncodingRangeError(FolnerLabError, OverflowError):
    """An element falls outside the range representable by the key packing."""


class DegenerateInputError(FolnerLabError, ValueError):
    """An input that must be nonempty (or nonzero) is not."""


class PreconditionError(FolnerLabError, ValueError):
    """A documented precondition of an operation is violated."""


class InsufficientInvarianceError(PreconditionError):
    """A set is not invariant enough for the requested construction.

    ``ratio`` carries the measured boundary ratio when one is available.
    """

    def __init__(self, message: str, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class WindowExhaustedError(FolnerLabError, RuntimeError):
    """The Folner schedule or element budget ran out before the requested depth."""


class WindowOverflowError(PreconditionError):
    """A function's support leaves the region on which an operator is computed."""

    def __init__(self, message: str, missing=None):
        super().__init__(message)
        self.missing = missing


class NumericalError(FolnerLabError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class ConfigError(FolnerLabError, ValueError):
    """Malformed run configuration."""
