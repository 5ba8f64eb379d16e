"""
Configuration management for the CoCo adoption pipeline.
Environment settings (.env) for logging, output location and threads, plus
the JSON run configuration that drives the stages.
"""

import json
import os
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from dotenv import load_dotenv

from coco import __version__
from coco.dataset import Strictness
from coco.errors import InfeasibleConfigError
from coco.explain import ENGINES
from coco.features import FeatureOptions
from coco.learner import SplitSpec, TrainParams
from coco.synthgen import SynthConfig

STAGE_NAMES = ["synth", "validate", "features", "diagnose", "train", "explain"]
PARTITION_ALL = "ALL"


def _env_int(name: str, default: int) -> Optional[int]:
    raw = os.getenv(name, str(default)).strip()
    try:
        return int(raw)
    except ValueError:
        return None


class PipelineSettings:
    """Process-wide settings read from the environment."""

    def __init__(self):
        """Initialize settings by loading from environment variables."""
        # Load .env file if it exists
        load_dotenv()

        # Logging Configuration
        self.log_level = os.getenv('COCO_LOG_LEVEL', 'INFO').upper()
        self.log_file = os.getenv('COCO_LOG_FILE', 'coco_pipeline.log')

        # Run Defaults
        self.output_dir = os.getenv('COCO_OUTPUT_DIR', 'out')
        self.threads = _env_int('COCO_THREADS', 1)
        self.master_seed = _env_int('COCO_MASTER_SEED', 20201)

        self.package_name = "coco-adoption"
        self.package_version = __version__

    def validate_config(self) -> List[str]:
        """
        Validate current settings and return any errors.

        Returns:
            list[str]: List of validation error messages
        """
        errors = []

        if self.log_level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            errors.append(f"COCO_LOG_LEVEL must be a logging level name, got {self.log_level!r}")

        if self.threads is None:
            errors.append("COCO_THREADS must be an integer")
        elif self.threads < 0:
            errors.append("COCO_THREADS must be 0 (auto) or a positive worker count")

        if self.master_seed is None:
            errors.append("COCO_MASTER_SEED must be an integer")
        elif self.master_seed < 0:
            errors.append("COCO_MASTER_SEED must be non-negative")

        if not self.output_dir:
            errors.append("COCO_OUTPUT_DIR must not be empty")

        return errors

    def __str__(self) -> str:
        return (
            f"PipelineSettings(\n"
            f"  log_level='{self.log_level}',\n"
            f"  log_file='{self.log_file or 'DISABLED'}',\n"
            f"  output_dir='{self.output_dir}',\n"
            f"  threads={self.threads},\n"
            f"  master_seed={self.master_seed}\n"
            f")"
        )


def joblib_workers(threads: int) -> int:
    """joblib n_jobs for a thread setting (0 means every core)."""
    return -1 if threads == 0 else threads


def derive_seed(master_seed: int, stage_name: str) -> int:
    """Stage seed from the master seed and the stage name, independent of stage order."""
    sequence = np.random.SeedSequence([master_seed, zlib.crc32(stage_name.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])


@dataclass
class RunConfig:
    """Everything a pipeline run depends on, apart from the input files themselves."""
    output_dir: str = "out"
    input_dir: Optional[str] = None
    seed: int = 20201
    strictness: str = Strictness.STRICT.value
    strict: bool = False
    threads: int = 1
    stages: Dict[str, bool] = field(default_factory=dict)
    synth: Dict[str, Any] = field(default_factory=dict)
    split: Dict[str, Any] = field(default_factory=dict)
    features: Dict[str, Any] = field(default_factory=dict)
    diagnose: Dict[str, Any] = field(default_factory=dict)
    train: Dict[str, Any] = field(default_factory=dict)
    explain: Dict[str, Any] = field(default_factory=dict)
    seed_from_cli: bool = False

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Build a run configuration from a parsed JSON object.

        Raises:
            InfeasibleConfigError: Unknown keys
        """
        known = {f.name for f in fields(cls)} - {"seed_from_cli"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InfeasibleConfigError(f"unknown run configuration key(s): {', '.join(unknown)}")
        return cls(**data)

    def stage_enabled(self, name: str) -> bool:
        if name in self.stages:
            return bool(self.stages[name])
        if name == "synth":
            return self.input_dir is None
        return True

    def stage_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    @property
    def n_jobs(self) -> int:
        return joblib_workers(self.threads)

    def synth_config(self) -> SynthConfig:
        data = dict(self.synth)
        if "seed" not in data or self.seed_from_cli:
            data["seed"] = self.stage_seed("synth")
        return SynthConfig.from_dict(data)

    def split_spec(self) -> SplitSpec:
        data = dict(self.split)
        data.setdefault("seed", self.stage_seed("split"))
        return SplitSpec.from_dict(data)

    def train_params(self) -> TrainParams:
        data = {k: v for k, v in self.train.items() if k != "partitions"}
        return TrainParams.from_dict(data)

    def feature_options(self) -> FeatureOptions:
        known = {f.name for f in fields(FeatureOptions)}
        return FeatureOptions.from_dict({k: v for k, v in self.features.items() if k in known})

    def stage_arguments(self, name: str) -> Dict[str, Any]:
        """Per-stage parameter map handed to Stage.execute()."""
        if name == "validate":
            return {"strictness": self.strictness}
        return dict(getattr(self, name, None) or {})

    def validate(self) -> List[str]:
        """
        Validate the run configuration and return any errors.

        Returns:
            List[str]: List of validation error messages
        """
        errors = []

        if not self.output_dir:
            errors.append("output_dir is required")
        if self.input_dir is not None and not Path(self.input_dir).is_dir():
            errors.append(f"input_dir {self.input_dir!r} is not a directory")
        if self.input_dir is None and not self.stage_enabled("synth"):
            errors.append("input_dir is required when the synth stage is disabled")
        if not isinstance(self.seed, int) or self.seed < 0:
            errors.append("seed must be a non-negative integer")
        if self.strictness not in {s.value for s in Strictness}:
            errors.append("strictness must be 'strict' or 'lenient'")
        if not isinstance(self.threads, int) or self.threads < 0:
            errors.append("threads must be 0 (auto) or a positive worker count")
            return errors

        unknown_stages = sorted(set(self.stages) - set(STAGE_NAMES))
        if unknown_stages:
            errors.append(f"unknown stage toggle(s): {', '.join(unknown_stages)}")

        for section, build in (("synth", self.synth_config), ("split", self.split_spec),
                               ("train", self.train_params), ("features", self.feature_options)):
            try:
                value = build()
            except (TypeError, ValueError, InfeasibleConfigError) as e:
                errors.append(f"{section}: {e}")
                continue
            if hasattr(value, "validate"):
                errors.extend(f"{section}: {problem}" for problem in value.validate())

        engine = self.explain.get("engine", "batch")
        if engine not in ENGINES:
            errors.append(f"explain.engine must be one of {', '.join(ENGINES)}")
        cap = self.explain.get("sample_cap", 10_000)
        if cap is not None and (not isinstance(cap, int) or cap < 1):
            errors.append("explain.sample_cap must be a positive integer or null")
        rows = self.explain.get("rows", "test")
        if rows not in ("test", "train"):
            errors.append("explain.rows must be 'test' or 'train'")

        return errors


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a run configuration from JSON and apply CLI overrides.

    Args:
        path: JSON file, or None for defaults
        overrides: Non-None values replace the file's (seed, threads, output_dir, input_dir, strict)

    Returns:
        RunConfig: Unvalidated run configuration

    Raises:
        InfeasibleConfigError: Unreadable file or unknown keys
    """
    data: Dict[str, Any] = {"output_dir": settings.output_dir, "seed": settings.master_seed,
                            "threads": settings.threads}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                loaded = json.load(handle)
        except OSError as e:
            raise InfeasibleConfigError(f"cannot read run configuration {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise InfeasibleConfigError(f"run configuration {path} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise InfeasibleConfigError(f"run configuration {path} must be a JSON object")
        data.update(loaded)

    config = RunConfig.from_dict(data)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        setattr(config, key, value)
        if key == "seed":
            config.seed_from_cli = True
    return config


# Global settings instance
settings = PipelineSettings()
