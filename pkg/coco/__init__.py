"""CoCo adoption engine: dataset model, synthetic generator, temporal graphs, features, statistics, learners and explanations."""

from .errors import CocoError

__version__ = "1.0.0"

__all__ = ['CocoError', '__version__']
