"""Exception types shared across the package."""


class BinMaskError(Exception):
    """Base class for all errors raised by this library."""


class ConfigError(BinMaskError):
    """Invalid configuration: bad shapes, bindings, or experiment files."""


class DataError(BinMaskError):
    """Unusable input data (CSV parsing problems, bad labels)."""


class NumericalError(BinMaskError):
    """Non-finite values encountered during computation."""


class StateError(BinMaskError):
    """Operation called out of order or on state that forbids it."""
