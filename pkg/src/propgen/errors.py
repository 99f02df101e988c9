"""Exception types shared across the toolkit."""

from __future__ import annotations


class DataError(ValueError):
    """Input data violates a format or invariant."""


class ParseError(DataError):
    """A file could not be parsed at all."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class ValidationError(DataError):
    """Parsed data breaks one or more invariants.

    ``problems`` holds one message per offending record.
    """

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ConfigError(ValueError):
    """A run configuration does not match its schema."""

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path
