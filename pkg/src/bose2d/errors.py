"""Exception hierarchy shared by all modules."""


class Bose2DError(Exception):
    """Base class for errors raised by this package."""


class DomainError(Bose2DError, ValueError):
    """A numerical argument lies outside the domain of the operation."""


class UsageError(Bose2DError, ValueError):
    """An operation was called with inconsistent or unsupported arguments."""


class ConfigurationError(Bose2DError, ValueError):
    """Model data (potential table, experiment config) is incomplete or invalid."""

    def __init__(self, message, *, line=None, entry=None):
        super().__init__(message)
        self.line = line
        self.entry = entry


class DivergenceError(Bose2DError, ArithmeticError):
    """The grand-canonical partition function does not converge."""


class TruncationError(Bose2DError, RuntimeError):
    """The Fock-space truncation could not be made accurate within budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
