"""Exception types shared across the package."""


class KincalError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(KincalError, ValueError):
    """A numeric input is non-finite or outside its legal range."""


class DimensionError(KincalError, ValueError):
    """Vector/grid sizes do not match the model or each other."""


class ExtrapolationError(KincalError, ValueError):
    """A query time lies outside the sampled joint-state range."""


class ParseError(KincalError, ValueError):
    """A file could not be parsed; the message names the location."""


class SingularSystemError(KincalError, RuntimeError):
    """The normal equations are rank deficient.

    ``indices`` lists the packed-parameter indices that received no
    constraint from the residuals.
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class ConfigurationError(KincalError, ValueError):
    """The run configuration is inconsistent (e.g. too few datasets)."""


class MatchingFailure(KincalError, RuntimeError):
    """No validated matches survived; carries per-pair match counts."""

    def __init__(self, message, pair_counts=None):
        super().__init__(message)
        self.pair_counts = dict(pair_counts or {})
