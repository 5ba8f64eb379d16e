"""
Base class for pipeline stage implementations.
All stages should inherit from StageBase.

A stage owns one directory under the output root. Running it clears that
directory, checks its upstream manifests, does its work and writes
manifest.json declaring every file it produced.
"""

import hashlib
import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd

from coco.errors import CocoError
from config import PARTITION_ALL, RunConfig, settings

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class StageError(CocoError):
    """Custom exception for stage orchestration errors."""
    pass


class MissingDependencyError(StageError):
    """An upstream stage has not produced its manifest."""
    pass


class StaleArtifactError(StageError):
    """An upstream output no longer matches the hash its manifest declares."""
    pass


class DegenerateStatisticsWarning(StageError, UserWarning):
    """Degenerate test cells found while running with --strict."""
    pass


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def dump_json(data: Any, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2, sort_keys=True, ensure_ascii=False)
        handle.write("\n")


class StageBase:
    """Base class for all pipeline stages."""

    name = "stage"
    order = 0
    requires: Tuple[str, ...] = ()
    description = ""

    def __init__(self, run_config: RunConfig):
        """Initialize the stage with the run configuration."""
        self.config = run_config
        self.output_root = Path(run_config.output_dir)
        self.stage_dir = self.output_root / self.name
        self.outputs: Dict[str, Path] = {}
        self.inputs: Dict[str, str] = {}
        self.upstream: Dict[str, Dict[str, Any]] = {}

    def execute(self, arguments: Dict[str, Any]) -> str:
        """
        Run the stage and write its manifest.

        Args:
            arguments: Stage parameter map from the run configuration

        Returns:
            str: Formatted stage summary
        """
        logger.info(f"Stage {self.name}: start")
        self.upstream = {dep: self.require(dep) for dep in self.dependencies()}
        if self.stage_dir.exists():
            shutil.rmtree(self.stage_dir)
        self.stage_dir.mkdir(parents=True)

        summary = self.run(arguments)
        self.write_manifest(self.parameters(arguments))
        logger.info(f"Stage {self.name}: wrote {len(self.outputs)} file(s) to {self.stage_dir}")
        return summary

    def run(self, arguments: Dict[str, Any]) -> str:
        """
        Do the stage's work. Must be implemented by subclasses.

        Args:
            arguments: Stage parameter map

        Returns:
            str: Formatted stage summary
        """
        raise NotImplementedError("Subclasses must implement run() method")

    def dependencies(self) -> Tuple[str, ...]:
        """Upstream stages whose manifests must exist before this stage runs."""
        return self.requires

    def parameters(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        """Parameters recorded in the manifest; subclasses add derived values."""
        return dict(arguments)

    # -------------------------------------------------------------------------
    # Upstream artifacts
    # -------------------------------------------------------------------------

    def upstream_dir(self, stage: str) -> Path:
        return self.output_root / stage

    def require(self, stage: str) -> Dict[str, Any]:
        """
        Load an upstream manifest and check its outputs are unchanged.

        Raises:
            MissingDependencyError: Manifest absent
            StaleArtifactError: An output was modified or removed after the manifest was written
        """
        path = self.upstream_dir(stage) / MANIFEST_NAME
        if not path.exists():
            raise MissingDependencyError(
                f"stage '{self.name}' needs '{stage}' first: missing manifest {path}")
        with open(path, "r", encoding="utf-8") as handle:
            manifest = json.load(handle)
        for relative, expected in manifest.get("outputs", {}).items():
            output = self.upstream_dir(stage) / relative
            if not output.exists():
                raise StaleArtifactError(f"{stage} output {output} is missing; re-run '{stage}'")
            if file_sha256(output) != expected:
                raise StaleArtifactError(f"{stage} output {output} changed since its manifest was written; "
                                         f"re-run '{stage}'")
        manifest["sha256"] = file_sha256(path)
        return manifest

    def record_input(self, path: Union[str, Path]) -> Path:
        """Hash an input that is not an upstream stage output (e.g. --input-dir tables)."""
        path = Path(path)
        self.inputs[path.name] = file_sha256(path)
        return path

    # -------------------------------------------------------------------------
    # Declared outputs
    # -------------------------------------------------------------------------

    def output_path(self, relative: str) -> Path:
        path = self.stage_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def declare(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.outputs[path.relative_to(self.stage_dir).as_posix()] = path
        return path

    def write_json(self, relative: str, data: Any) -> Path:
        path = self.output_path(relative)
        dump_json(data, path)
        return self.declare(path)

    def write_frame(self, relative: str, frame: pd.DataFrame) -> Path:
        path = self.output_path(relative)
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        return self.declare(path)

    def manifest(self, parameters: Dict[str, Any]) -> Dict[str, Any]:
        return {
            "stage": self.name,
            "package": settings.package_name,
            "version": settings.package_version,
            "parameters": parameters,
            "inputs": dict(sorted(self.inputs.items())),
            "upstream": {stage: m["sha256"] for stage, m in sorted(self.upstream.items())},
            "outputs": {rel: file_sha256(path) for rel, path in sorted(self.outputs.items())},
        }

    def write_manifest(self, parameters: Dict[str, Any]) -> Path:
        path = self.stage_dir / MANIFEST_NAME
        dump_json(self.manifest(parameters), path)
        return path

    def declared_outputs(self) -> List[str]:
        return sorted(self.outputs)


def stage_dataset_dir(output_root: Union[str, Path], stage: str) -> Path:
    return Path(output_root) / stage / "dataset"


def partition_names(states: List[str], requested: Optional[List[str]] = None) -> List[str]:
    """Per-state partitions followed by the pooled ALL partition."""
    names = list(states) + [PARTITION_ALL]
    if requested:
        names = [n for n in names if n in requested]
    return names
