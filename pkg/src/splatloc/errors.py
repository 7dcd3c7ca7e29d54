"""Exception types raised by splatloc."""

from __future__ import annotations


class SplatlocError(Exception):
    """Base class for all library errors."""


class ContractError(SplatlocError, ValueError):
    """Inputs violate an operation's preconditions (shapes, sizes)."""


class ConfigError(SplatlocError, ValueError):
    """Invalid configuration value."""


class PlyFormatError(SplatlocError):
    """PLY header is malformed or lacks a required property."""


class PlyDataError(SplatlocError):
    """PLY payload holds unusable values (truncated, non-finite)."""
