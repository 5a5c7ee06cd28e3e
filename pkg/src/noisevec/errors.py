"""Exception types shared across the package."""


class NoiseVecError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(NoiseVecError):
    """A file could not be parsed; the message names the offending byte or line."""


class DataError(NoiseVecError):
    """Inputs are structurally valid but inconsistent (shapes, counts, ids)."""


class NumericalError(NoiseVecError):
    """A linear-algebra step failed, e.g. a matrix that must be positive definite is not."""
