"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of the operands do not fit the operation."""


class ParameterError(ValueError):
    """A hyperparameter or argument is outside its documented domain."""


class ContractError(RuntimeError):
    """A caller violated an API precondition that is not a plain value check."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class FormatError(ValueError):
    """A file payload could not be parsed."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
