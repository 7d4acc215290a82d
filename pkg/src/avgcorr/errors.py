from __future__ import annotations


class InputError(ValueError):
    """Argument outside an operation's domain (bad index, shape, empty buffer)."""


class ModelError(ValueError):
    """The Markov chain violates a structural assumption, e.g. it is reducible."""


class ConfigError(ValueError):
    """Inconsistent agent or experiment configuration."""


class DivergenceError(RuntimeError):
    """Training produced non-finite parameters; ``curve`` keeps the rows logged so far."""

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = list(curve or [])
