"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DLinOSSError(Exception):
    pass


class ConfigError(DLinOSSError, ValueError):
    """Inconsistent shapes or an invalid configuration."""


class DomainError(DLinOSSError, ValueError):
    """A value lies outside the set an operation is defined on."""


class SingularTargetError(DomainError):
    """The requested eigenvalue is zero, where the inverse map divides by |lambda|^2."""


class NonFiniteError(DLinOSSError, FloatingPointError):
    """NaN or Inf showed up in activations or gradients.

    ``block`` is the index of the offending SSM block (or None for the
    encoder/decoder); ``param`` names the offending parameter for gradients.
    """

    def __init__(self, message: str, *, block: int | None = None, param: str | None = None):
        super().__init__(message)
        self.block = block
        self.param = param


class DataFormatError(DLinOSSError, ValueError):
    pass


class RaggedRowsError(DataFormatError):
    pass


class NonNumericCellError(DataFormatError):
    pass


class MissingTargetError(DataFormatError):
    pass
