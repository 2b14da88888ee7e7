"""Exception hierarchy shared by every module."""


class OdsdError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(OdsdError, ValueError):
    """An operation was called with inputs outside its documented domain."""


class DegenerateVectorError(ContractViolation):
    """A vector with zero norm reached an operation that normalises it."""


class ReduceK(ContractViolation):
    """k-means was asked for more clusters than there are points."""

    def __init__(self, n, k):
        super().__init__(f"kmeans: k={k} exceeds the number of points n={n}; reduce k")
        self.n = n
        self.k = k


class RequestTooLarge(ContractViolation):
    """More items were requested than the pool holds."""


class FormatError(OdsdError):
    """A file could not be parsed; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(OdsdError, ValueError):
    """Invalid configuration: unknown key, bad value, or incompatible inputs."""
