"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4),
so library code should raise the most specific type that applies.
"""


class PoolNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PoolNetError, ValueError):
    """An operation received tensors with incompatible shapes."""


class ConfigError(PoolNetError, ValueError):
    """A configuration value or combination of values is invalid."""


class DataError(PoolNetError, ValueError):
    """A dataset file or manifest is missing, malformed, or inconsistent."""


class NumericError(PoolNetError, ArithmeticError):
    """Training produced a non-finite loss or similar numeric failure."""


class CheckpointError(PoolNetError, ValueError):
    """A checkpoint file is malformed or does not match the model."""
