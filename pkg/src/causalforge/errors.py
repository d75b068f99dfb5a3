"""Shared exception types."""


class CausalForgeError(Exception):
    """Base class for all library errors."""


class ValidationError(CausalForgeError):
    """An input object or file violates an invariant."""


class FormatError(CausalForgeError):
    """A binary or JSON artifact does not match its on-disk schema."""


class ConfigError(CausalForgeError):
    """A configuration value is out of range or inconsistent."""
