"""Shared exception types."""


class FormatError(ValueError):
    """A file does not conform to its declared binary or text format."""


class IntegrityError(RuntimeError):
    """A referenced artifact is missing or its content hash does not match."""
