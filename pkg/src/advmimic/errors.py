"""Exception types raised across the package."""


class MimicError(Exception):
    """Base class for all errors raised by advmimic."""


class ContractError(MimicError, ValueError):
    """Inputs violate an operation's preconditions (shapes, stale caches, ...)."""


class ConfigError(MimicError, ValueError):
    pass


class NonFiniteError(MimicError, FloatingPointError):
    """A loss, gradient or state became NaN/inf. Runs abort on this."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EmptyBufferError(MimicError, LookupError):
    pass


class DemoQualityError(MimicError):
    """The scripted expert failed its own task."""


class SyncError(MimicError, RuntimeError):
    """Workers reached a gradient barrier out of step."""
