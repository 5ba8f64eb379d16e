"""
Stage: synth
Generate a seeded synthetic CoCo dataset plus its latent sidecar.
"""

import logging
from typing import Any, Dict

from coco.dataset import write_dataset
from coco.synthgen import emit_latents, simulate
from stages.base import StageBase
from stages.table_formatter import TableFormatter

logger = logging.getLogger(__name__)


class Synth(StageBase):
    """Write dataset/*.csv, latents.csv and the effective generator config."""

    name = "synth"
    order = 1
    description = "Generate a seeded synthetic dataset with planted effects"

    def run(self, arguments: Dict[str, Any]) -> str:
        config = self.config.synth_config()
        trace = simulate(config)
        dataset = trace.dataset
        for path in write_dataset(dataset, self.stage_dir / "dataset").values():
            self.declare(path)
        self.declare(emit_latents(trace, self.output_path("latents.csv")))
        self.write_json("synth_config.json", config.to_dict())

        counts = {
            "seed": config.seed,
            "states": len(dataset.geography.states()),
            "villages": len(dataset.geography.villages),
            "farmers": len(dataset.farmers),
            "mediators": len(dataset.mediators),
            "videos": len(dataset.videos),
            "screenings": len(dataset.screenings),
            "attendance": dataset.attendance_count(),
            "adoptions": len(dataset.adoptions),
        }
        logger.info(f"Synthetic dataset: {counts}")
        return TableFormatter.format_single_record(counts, title="Synthetic Dataset")

    def parameters(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        return {"synth": self.config.synth_config().to_dict()}
