"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
TensorFormatError / DatasetError -> 2, NumericalError -> 3.
"""


class IbexError(Exception):
    """Base class for all package errors."""


class ConfigError(IbexError):
    """Invalid configuration document or parameter combination."""


class TensorFormatError(IbexError):
    """Corrupt or malformed UIBF tensor file."""


class DatasetError(IbexError):
    """Manifest or cross-reference problem in a dataset."""


class NumericalError(IbexError):
    """Non-finite values or a failed numerical invariant."""
