"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters more than the message text.
"""


class AdvlipError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AdvlipError, ValueError):
    """Operands have incompatible or malformed shapes."""


class ConfigError(AdvlipError, ValueError):
    """A configuration value is invalid; the message names the field."""


class DataIntegrityError(AdvlipError, RuntimeError):
    """An on-disk dataset or checkpoint is malformed or inconsistent."""


class NumericalError(AdvlipError, RuntimeError):
    """A computation produced non-finite values."""
