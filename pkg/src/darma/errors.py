"""Exception hierarchy shared across the package."""


class DarmaError(Exception):
    """Base class for all package errors."""


class InvalidInput(DarmaError):
    """Caller supplied data that violates a documented precondition."""


class DataIntegrityError(DarmaError):
    """Constructed panel fails an integrity check (e.g. too many negative rows)."""

    def __init__(self, message, fraction=None):
        super().__init__(message)
        self.fraction = fraction


class FetchError(DarmaError):
    """A remote series could not be retrieved."""


class FormatError(DarmaError):
    """A CSV file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class InitializationError(DarmaError):
    """Sampler could not start (non-finite posterior at the initial point)."""


class SamplerFailure(DarmaError):
    """Sampler produced no usable draws (e.g. every warmup transition diverged)."""


class NumericalError(DarmaError):
    """A numeric result left the finite range; carries context when known."""
