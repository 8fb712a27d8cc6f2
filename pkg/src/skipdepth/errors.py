"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class NumericInputError(ValueError):
    """Input contains values outside the domain of an operation."""


class FormatError(ValueError):
    """A file does not follow the expected layout."""


class RangeError(ValueError):
    """A value cannot be represented in the target encoding."""


class CheckpointError(RuntimeError):
    """A checkpoint could not be restored."""


class ConfigError(ValueError):
    """A run configuration is invalid."""
