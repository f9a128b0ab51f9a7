"""Exception types shared across the package.

The CLI maps each family onto an exit code: usage/config/dimension problems
exit 1, I/O problems exit 2, numeric failures exit 3.
"""


class RetinexSSMError(Exception):
    exit_code = 1


class UsageError(RetinexSSMError):
    """API misuse, e.g. running backward twice on one tape."""


class ConfigError(RetinexSSMError):
    """Invalid or unknown configuration value."""


class DimensionError(RetinexSSMError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(RetinexSSMError, ArithmeticError):
    exit_code = 3


class ImageIOError(RetinexSSMError, OSError):
    exit_code = 2


class CheckpointError(RetinexSSMError, OSError):
    exit_code = 2
