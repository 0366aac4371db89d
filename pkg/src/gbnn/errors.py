"""Exception hierarchy shared by every gbnn module."""


class GBNNError(Exception):
    """Base class for all errors raised by gbnn."""


class DimensionError(GBNNError, ValueError):
    """Operand shapes do not agree."""


class NumericError(GBNNError, ArithmeticError):
    """A NaN or infinite value appeared where a finite one is required."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss.

    ``epoch`` and ``iteration`` locate the failure (``None`` when unknown).
    """

    def __init__(self, message, epoch=None, iteration=None):
        super().__init__(message)
        self.epoch = epoch
        self.iteration = iteration


class ConfigError(GBNNError, ValueError):
    """Invalid hyperparameter or run configuration."""


class DataError(GBNNError, ValueError):
    """Dataset contents violate a contract (labels, counts, classes)."""


class ParseError(DataError):
    """A text data file could not be parsed."""


class FormatError(GBNNError, ValueError):
    """A binary container (IDX, model file) is malformed."""


class UsageError(GBNNError, RuntimeError):
    """An API was called out of order (e.g. backward without forward)."""
