"""Exception hierarchy shared across the package."""


class AdaGANError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(AdaGANError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(AdaGANError, ValueError):
    """A documented precondition of an operation was violated."""


class CapacityError(AdaGANError, MemoryError):
    """A tensor would exceed the configured memory budget."""


class ConfigError(AdaGANError, ValueError):
    """An architecture name, profile or experiment setting is invalid."""


class FormatError(AdaGANError, ValueError):
    """A file on disk does not follow the expected binary layout."""


class DivergenceError(AdaGANError, RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
