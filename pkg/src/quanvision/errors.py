"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class QuanvisionError(Exception):
    exit_code = 2


class ConfigError(QuanvisionError):
    """Invalid configuration value or file."""


class InputError(QuanvisionError):
    """Bad input data: images, masks, datasets, labels."""


class StructuralError(QuanvisionError, ValueError):
    """Shapes, indices or counts that do not line up."""


class FormatError(QuanvisionError):
    """A file on disk does not follow its binary or text format."""


class CacheError(FormatError):
    """A cached quantum tensor is unreadable or stale."""


class NumericError(QuanvisionError, ArithmeticError):
    exit_code = 3
