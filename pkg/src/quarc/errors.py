"""Exception types shared across the kit.

The CLI maps these onto exit codes: config/usage problems exit 1, data and
format problems exit 2, numeric failures exit 3.
"""


class QuarcError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(QuarcError):
    """Operand shapes are incompatible for the requested operation."""


class PackingError(QuarcError):
    """A real sequence cannot be packed into quaternions."""


class ContractError(QuarcError):
    """A call violated an operation's precondition."""


class ConfigError(QuarcError):
    """Bad model or run configuration."""


class IngestionError(QuarcError):
    """A data file could not be parsed or is inconsistent."""


class DataError(QuarcError):
    """Dataset-level problem (missing split, bad label, ...)."""


class MetricError(QuarcError):
    """A metric is undefined for the given inputs."""


class NumericError(QuarcError):
    """Non-finite values or a failed numeric check."""
