"""
Stage: diagnose
Adoption rates, the differential factor battery, the gender battery and the
descriptive plot-data bundle.
"""

import logging
from typing import Any, Dict

from coco.dataset import Strictness, load_dataset
from coco.diagnostics import (BATTERY_ALPHA, BATTERY_M, descriptive_suite, differential_battery,
                              farmer_adoption_rates, gender_battery, mediator_adoption_rates)
from coco.features import FeatureMatrix
from stages.base import DegenerateStatisticsWarning, StageBase, stage_dataset_dir
from stages.table_formatter import TableFormatter

logger = logging.getLogger(__name__)


class Diagnose(StageBase):
    """Write the statistical reports and descriptive/*.csv tables."""

    name = "diagnose"
    order = 4
    requires = ("validate", "features")
    description = "Run the differential and gender Welch batteries and descriptive statistics"

    def run(self, arguments: Dict[str, Any]) -> str:
        alpha = float(arguments.get("alpha", BATTERY_ALPHA))
        m = int(arguments.get("m", BATTERY_M))
        dataset = load_dataset(stage_dataset_dir(self.output_root, "validate"), Strictness.STRICT)
        matrix = FeatureMatrix.read(self.upstream_dir("features"))

        rates = farmer_adoption_rates(dataset)
        self.write_frame("adoption_rates_farmer.csv", rates.rename_axis("farmer_id").reset_index())
        self.write_frame("adoption_rates_mediator.csv", mediator_adoption_rates(dataset))

        differential = differential_battery(dataset, matrix, alpha, m)
        self.write_json("differential_battery.json", differential.to_dict())
        self.write_frame("quartile_means.csv", differential.mean_table())

        gender = gender_battery(dataset)
        self.write_json("gender_battery.json", gender.to_dict())

        bundle = descriptive_suite(dataset)
        for table_name, frame in sorted(bundle.tables.items()):
            self.write_frame(f"descriptive/{table_name}.csv", frame)
        self.write_json("descriptive/summary.json", bundle.summary)

        degenerate = [f"{state}/{factor}" for state, factor in differential.degenerate_cells]
        degenerate += [f"{c.role}/{c.state_id}" for c in gender.cells if c.note == "degenerate"]
        if degenerate:
            logger.warning(f"Degenerate test cells: {', '.join(degenerate)}")
            if self.config.strict:
                raise DegenerateStatisticsWarning(f"degenerate test cells under --strict: {', '.join(degenerate)}")

        gender_rows = [{"role": c.role, "state_id": c.state_id, "ar_men": c.ar_men, "ar_women": c.ar_women,
                        "t": c.t_stat, "p": c.p_value, "tier": c.tier} for c in gender.cells]
        output = [
            TableFormatter.format_battery(differential.states,
                                          title=f"Differential Battery, t (* p < {alpha}/{m})"),
            TableFormatter.format_as_table(gender_rows, ["role", "state_id", "ar_men", "ar_women", "t", "p", "tier"],
                                           title="Gender Battery"),
        ]
        if differential.skipped:
            skipped = [{"state_id": s, "reason": r} for s, r in sorted(differential.skipped.items())]
            output.append(TableFormatter.format_as_table(skipped, ["state_id", "reason"], title="Skipped States"))
        return "\n".join(output)

    def parameters(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        return {"alpha": float(arguments.get("alpha", BATTERY_ALPHA)), "m": int(arguments.get("m", BATTERY_M))}
