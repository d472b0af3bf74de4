"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. ShapeError is a ConfigError subclass (bad wiring is a
configuration problem, not a data problem).
"""


class HapnetError(Exception):
    pass


class ConfigError(HapnetError):
    """Invalid configuration: bad parameter values, unknown keys, bad wiring."""


class ShapeError(ConfigError):
    """Tensor shapes incompatible with the requested operation."""


class DataError(HapnetError):
    """Scene bundles or checkpoints that are missing, corrupt or inconsistent."""


class NumericError(HapnetError):
    """NaN/Inf detected, or a numeric check failed."""
