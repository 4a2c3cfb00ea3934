"""Exception types shared across the package."""


class MemreError(ValueError):
    """Base class for all package-specific errors."""


class DimensionError(MemreError):
    """Operand shapes are incompatible with the requested operation."""


class PreconditionError(MemreError):
    """An operation was called outside its documented domain."""


class InputError(MemreError):
    """User-supplied data (tokens, spans, ids) is out of range."""


class ParseError(MemreError):
    """A corpus file could not be decoded into documents."""


class ConfigError(MemreError):
    """A configuration value is missing, malformed, or inconsistent."""


class InvalidPriorError(MemreError):
    """A class-prior table violates 0 <= pi_labeled <= pi < 1."""


class DivergenceError(MemreError):
    """Training produced a non-finite loss.

    Carries the path of the last finite-loss checkpoint, when one was
    written, so callers can recover.
    """

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
