"""Exception hierarchy shared across the package."""


class TransflowerError(Exception):
    """Base class for all package errors."""


class ConfigError(TransflowerError, ValueError):
    pass


class ShapeError(TransflowerError, ValueError):
    pass


class DataError(TransflowerError, ValueError):
    """Input data is missing, malformed or too short."""


class NumericalError(TransflowerError, ArithmeticError):
    """A computation produced non-finite values."""


class CheckpointError(DataError):
    pass
