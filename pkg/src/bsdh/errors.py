"""Exception hierarchy shared across the package."""


class HashError(Exception):
    """Base class for all package errors."""


class ShapeError(HashError, ValueError):
    """Input array does not match the shape a layer or function expects."""


class NumericError(HashError, ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""


class StateError(HashError, RuntimeError):
    """An object was used with state it was not produced from."""


class DataError(HashError, ValueError):
    """Dataset or argument content is invalid."""


class FormatError(HashError):
    """A persisted file is corrupt, truncated or has the wrong magic."""


class UnsupportedVersionError(FormatError):
    """A persisted file carries a format version this build cannot read."""


class ConfigError(HashError, ValueError):
    """Run configuration is malformed or references missing resources."""
