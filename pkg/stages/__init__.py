"""Pipeline stage implementations package."""

from .base import StageBase, StageError

__all__ = ['StageBase', 'StageError']
