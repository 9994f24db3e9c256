"""Exception hierarchy shared across the package."""


class SpecgpError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SpecgpError, ValueError):
    """Bad argument: dimension mismatch, out-of-range index, invalid value."""


class UnsupportedKernelError(SpecgpError):
    """The requested operation is not available for this kernel family."""


class NotPositiveDefiniteError(SpecgpError):
    """Cholesky factorization failed at every jitter level.

    Attributes
    ----------
    jitter : float
        The last (largest) jitter value that was attempted.
    """

    def __init__(self, message, jitter=0.0):
        super().__init__(message)
        self.jitter = jitter


class UndefinedMetricError(SpecgpError):
    """A metric is undefined for the given inputs (e.g. zero denominator)."""


class DataError(SpecgpError):
    """Dataset loading or parsing failed."""


class DatasetMissingError(DataError):
    """A required dataset file is absent."""


class ConfigError(SpecgpError):
    """Experiment configuration is invalid."""
