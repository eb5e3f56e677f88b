"""Exception hierarchy shared by all modules."""


class OrliczLabError(Exception):
    """Base class for library errors."""


class InputError(OrliczLabError, ValueError):
    """Malformed or out-of-contract input."""


class DomainError(InputError):
    """A point lies outside the spatial domain."""


class ParameterError(InputError):
    """A numerical parameter violates an operation's precondition."""


class RadiusError(OrliczLabError):
    """Conjugate search box exhausted with the maximizer on its boundary."""


class ConvergenceError(OrliczLabError):
    """An iterative solver stalled; ``diagnostics`` carries the history."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DependencyError(OrliczLabError):
    """A required collaborator (e.g. a conjugate) was not supplied."""
