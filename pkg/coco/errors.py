"""
Exception hierarchy for the CoCo adoption engine.
Stage-level errors (missing manifests, stale inputs) live in stages/base.py.
"""

from dataclasses import dataclass
from typing import List, Optional


class CocoError(Exception):
    """Base exception for all engine errors."""
    pass


@dataclass(frozen=True)
class ValidationIssue:
    """A single problem found while ingesting or validating a dataset."""
    table: str
    reason: str
    message: str
    line: Optional[int] = None

    def __str__(self) -> str:
        where = f"{self.table}.csv"
        if self.line is not None:
            where += f" line {self.line}"
        return f"{where}: {self.message}"


class DatasetFileError(CocoError):
    """A required table file is missing or unreadable."""
    pass


class DatasetValidationError(CocoError):
    """Strict-mode ingestion found one or more integrity violations."""

    def __init__(self, issues: List[ValidationIssue]):
        self.issues = list(issues)
        head = str(self.issues[0]) if self.issues else "unknown validation failure"
        more = f" (+{len(self.issues) - 1} more)" if len(self.issues) > 1 else ""
        super().__init__(f"{head}{more}")


class InfeasibleConfigError(CocoError):
    """A synthetic-data configuration cannot be realised."""
    pass


class UnknownEntityError(CocoError, KeyError):
    """A village, farmer or other identifier does not exist in the dataset."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


class GraphBuildError(CocoError):
    """A temporal graph could not be built (e.g. attendee cap exceeded)."""
    pass


class FeatureError(CocoError):
    """A feature is undefined for the requested (farmer, video, date)."""
    pass


class InsufficientSampleError(CocoError, ValueError):
    """A statistical test received fewer observations than it needs."""
    pass


class DegenerateStatisticsError(CocoError):
    """A test statistic is undefined (e.g. zero variance and equal means)."""
    pass


class EmptySplitError(CocoError):
    """A train/test split left one side empty."""
    pass


class SingleClassError(CocoError):
    """An operation needs both classes but only one is present."""
    pass


class ExplainError(CocoError):
    """An explanation request does not match the model or its data."""
    pass
