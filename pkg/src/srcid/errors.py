"""Exception types shared across the package."""


class SrcIdError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SrcIdError, ValueError):
    pass


class OutOfDomainError(SrcIdError, ValueError):
    """A query point lies outside the triangulated domain."""


class NumericalFailureError(SrcIdError, ArithmeticError):
    """A factorization, linear solve or eigensolve did not succeed."""


class ConfigError(SrcIdError, ValueError):
    pass
