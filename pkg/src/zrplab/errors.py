"""Shared exception types."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class SupercriticalError(DomainError):
    """Intensity parameter too large for the requested environment."""


class WindowTooSmallError(ValueError):
    """The finite window does not contain the feature being requested.

    Distinguishes truncation problems from genuine assumption failures.
    """


class ConstructionError(ValueError):
    """Invalid inputs to an environment or schedule constructor."""


class InvariantViolation(RuntimeError):
    """A runtime invariant of the event engine was broken (engine bug)."""
