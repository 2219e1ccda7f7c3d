"""Exception types shared across the package.

The CLI maps these to process exit codes: ConfigError -> 2, OSError -> 3,
NumericalError -> 4.
"""


class ConfigError(Exception):
    """Invalid configuration: bad shapes, unknown keys, incompatible specs."""


class CheckpointError(ConfigError):
    """Malformed or incompatible checkpoint file."""


class NumericalError(Exception):
    """NaN or Inf produced where only finite values are allowed."""
