"""Context-augmented hate speech detection."""

from ._core import *  # noqa: F401,F403
from ._core import ABSTAIN, Error

__all__ = [name for name in dir() if not name.startswith("_")]
