"""
Provider module for pipeline stages.
Handles stage discovery, registration and lookup.
"""

import importlib
import inspect
import logging
from pathlib import Path
from typing import Dict, List, Optional

from stages.base import StageBase

logger = logging.getLogger(__name__)

STAGES_DIR = Path(__file__).resolve().parent / "stages"
SUPPORT_MODULES = {"base", "table_formatter"}


def _class_name_to_stage_name(class_name: str) -> str:
    """Convert CamelCase class name to snake_case stage name."""
    result = ""
    for i, char in enumerate(class_name):
        if char.isupper() and i > 0:
            result += "_"
        result += char.lower()
    return result


class StageProvider:
    """Provides and manages pipeline stages."""

    def __init__(self):
        """Initialize stage provider."""
        self.implementations: Dict[str, type] = {}

    def register_stage(self, stage_name: str, stage_class: type) -> None:
        """
        Register a stage implementation.

        Args:
            stage_name: Name of the stage
            stage_class: Class implementing the stage
        """
        self.implementations[stage_name] = stage_class
        logger.debug(f"Registered stage: {stage_name}")

    def get_stage(self, stage_name: str) -> Optional[type]:
        """
        Get stage implementation by name.

        Args:
            stage_name: Name of the stage

        Returns:
            Stage class or None if not found
        """
        return self.implementations.get(stage_name)

    def list_stages(self) -> List[str]:
        """
        List all registered stages in pipeline order.

        Returns:
            List of stage names
        """
        return sorted(self.implementations, key=lambda name: (self.implementations[name].order, name))

    def is_stage_implemented(self, stage_name: str) -> bool:
        """
        Check if stage is implemented.

        Args:
            stage_name: Name of the stage

        Returns:
            True if implemented, False otherwise
        """
        return stage_name in self.implementations

    def discover(self, stages_dir: Path = STAGES_DIR) -> int:
        """
        Register every StageBase subclass found in the stages package.

        Returns:
            int: Number of stages registered
        """
        found = 0
        for py_file in sorted(stages_dir.glob("*.py")):
            if py_file.name.startswith("__") or py_file.stem in SUPPORT_MODULES:
                continue

            full_module_name = f"stages.{py_file.stem}"
            module = importlib.import_module(full_module_name)
            for name, obj in inspect.getmembers(module, inspect.isclass):
                if issubclass(obj, StageBase) and obj is not StageBase and obj.__module__ == full_module_name:
                    stage_name = obj.name if obj.name != StageBase.name else _class_name_to_stage_name(name)
                    self.register_stage(stage_name, obj)
                    found += 1
        logger.debug(f"Discovered {found} stage(s) in {stages_dir}")
        return found


# Global provider instance
stage_provider = StageProvider()
