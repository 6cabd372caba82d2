"""Exception hierarchy shared by every stage of the pipeline."""


class GDNetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(GDNetError, ValueError):
    pass


class DimensionError(GDNetError, ValueError):
    pass


class ValidationError(GDNetError, ValueError):
    pass


class FormatError(GDNetError, ValueError):
    pass


class VersionError(FormatError):
    pass


class NumericError(GDNetError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class DegenerateInputError(GDNetError, ValueError):
    pass


class InsufficientSamplesError(GDNetError, ValueError):
    pass


class GenerationError(GDNetError, RuntimeError):
    pass


class CacheError(GDNetError, RuntimeError):
    """A backward pass was handed a cache that does not belong to it."""
