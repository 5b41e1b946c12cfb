"""Shared exception for malformed input files."""


class ParseError(ValueError):
    """Malformed input file; the message carries the offending line."""
