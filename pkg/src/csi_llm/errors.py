"""Exception taxonomy shared across the package.

CLI exit codes: ConfigError -> 2, StageDependencyError -> 3, NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or violated invariant."""


class DataFormatError(ValueError):
    """Dataset file malformed, truncated, or inconsistent with the scenario."""


class DimensionError(ValueError):
    """Tensor shape does not match the contract of the operation."""


class WeightLoadError(ValueError):
    """Pretrained weight source missing a tensor or carrying a wrong shape."""


class DegenerateDataError(ValueError):
    """Data degenerate for the requested operation (all-zero reference, zero scale)."""


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required (divergence, bad input)."""


class StageDependencyError(RuntimeError):
    """A pipeline stage was requested before the stage that produces its input."""
