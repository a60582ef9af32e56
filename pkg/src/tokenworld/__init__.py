"""Token-based world model with an agent trained purely on imagined rollouts."""

from tokenworld.errors import CapacityError, StateError

__all__ = ["CapacityError", "StateError"]
__version__ = "0.1.0"
