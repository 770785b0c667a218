"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration or corpus/config mismatch, caught before work starts."""


class NonFiniteLossError(RuntimeError):
    """A training loss went NaN/inf; carries the offending step's stats."""

    def __init__(self, message: str, stats: dict | None = None):
        super().__init__(message)
        self.stats = stats or {}
