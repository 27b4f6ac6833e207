"""Shared exception types."""


class FormatError(ValueError):
    """An input file does not match its expected binary format."""
