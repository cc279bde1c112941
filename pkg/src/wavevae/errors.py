"""Exceptions raised for malformed files and configuration."""

from __future__ import annotations


class FormatError(ValueError):
    """A binary file does not follow its declared layout."""

    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: byte {offset}: {message}")


class ConfigError(ValueError):
    """A run configuration is malformed, incomplete or names an unknown key."""
