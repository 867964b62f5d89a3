"""Exception hierarchy shared across the workbench."""


class OwclipError(Exception):
    """Base class for all workbench errors."""


class DimensionError(OwclipError):
    """Vector or matrix dimensions do not agree."""


class ConfigError(OwclipError):
    """Invalid configuration value or inconsistent encoder setup."""


class InputError(OwclipError):
    """Caller-supplied value violates an operation precondition."""


class FormatError(OwclipError):
    """On-disk payload is corrupt, truncated, or has a bad header."""


class GuardError(OwclipError):
    """Crop ratio fell at or below the configured minimum."""


class RangeError(OwclipError):
    """Threshold range has lower bound above upper bound."""


class StateError(OwclipError):
    """Operation called against an object in the wrong state."""


class NumericsError(OwclipError):
    """Non-finite value encountered during training."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        if epoch is not None or batch is not None:
            message = f"{message} (epoch={epoch}, batch={batch})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ParseError(OwclipError):
    """No phrases could be extracted from the provider output."""


class NoPhrasesError(OwclipError):
    """Session finalize requires at least one selected phrase."""


class IngestError(OwclipError):
    """Manifest file missing or a row failed validation."""


class ConflictError(OwclipError):
    """A class label collides with one learned earlier."""


class StartupError(OwclipError):
    """Service could not start with the given config."""
