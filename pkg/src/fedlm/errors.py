"""Exception types shared across the package."""


class FedlmError(Exception):
    """Base class for errors raised by this package."""


class DataError(FedlmError):
    """A file on disk is malformed or violates a format invariant.

    The CLI maps this to exit code 2; argument/config mistakes map to 1.
    """
