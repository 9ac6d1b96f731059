"""Exception hierarchy shared by every module.

The CLI maps these onto stable exit codes (see ``cli.EXIT_CODES``).
"""


class DenoiseError(Exception):
    """Base class for all library errors."""


class DimensionError(DenoiseError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(DenoiseError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(DenoiseError, ValueError):
    """Invalid configuration value or unknown option."""


class InputError(DenoiseError, ValueError):
    """Input data (image, file) is unusable."""


class NumericError(DenoiseError, ArithmeticError):
    """A non-finite value appeared during training or optimisation."""
