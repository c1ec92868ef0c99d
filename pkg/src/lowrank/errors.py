"""Exception types shared across the library.

The CLI maps these onto distinct exit codes (config 2, data 3, numerical 4).
"""


class LowRankError(Exception):
    """Base class for all library errors."""


class RankDeficiencyError(LowRankError):
    """Input lost full column rank where an operation requires it."""


class NumericalError(LowRankError):
    """An iterative numerical procedure failed to converge."""


class SizeCapError(LowRankError):
    """A dense/oracle code path was asked to exceed its size cap."""


class DataError(LowRankError):
    """Malformed or unusable input data (files, observation sets)."""


class ConfigError(LowRankError):
    """Invalid run configuration."""
