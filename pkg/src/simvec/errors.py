"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError (and subclasses) -> 2,
FormatError / OSError -> 3, NumericError -> 4.
"""


class SimvecError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SimvecError):
    """Bad input data or arguments: domain violations, parse failures."""


class ShapeError(ValidationError):
    """Tensor or vector shape mismatch."""


class ConfigError(ValidationError):
    """Inconsistent or unsupported configuration."""


class ConsistencyError(ValidationError):
    """Objects that must belong together do not (e.g. trace vs params)."""


class FormatError(SimvecError):
    """Malformed, truncated, or incompatible binary file."""


class NumericError(SimvecError):
    """Non-finite values where finite ones are required."""
