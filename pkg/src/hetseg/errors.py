"""Exception hierarchy shared by all hetseg modules.

The CLI maps these onto exit codes: ValidationError -> 2,
FormatError -> 3, NumericError -> 4.
"""


class HetsegError(Exception):
    """Base class for all hetseg errors."""


class FormatError(HetsegError):
    """A file is malformed: bad magic, truncated payload, broken header."""


class ValidationError(HetsegError, ValueError):
    """Domain-level validation failed: schema, partition, range, shape."""


class NumericError(HetsegError, ArithmeticError):
    """A numeric procedure failed: divergence, singular covariance."""
