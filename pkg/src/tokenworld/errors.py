class CapacityError(RuntimeError):
    """Raised when a sequence would exceed the dynamics model's context window."""


class StateError(RuntimeError):
    """Raised when an operation is invalid in the current state (done env, empty buffer, ...)."""
