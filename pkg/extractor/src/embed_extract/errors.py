"""Error taxonomy: validation problems exit 2, format/IO problems exit 3."""


class ExtractError(Exception):
    """Base class for all extraction errors."""


class ValidationError(ExtractError):
    """Bad inputs or configuration."""


class FormatError(ExtractError):
    """Malformed dataset or cache bytes."""
