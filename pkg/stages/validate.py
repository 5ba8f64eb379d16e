"""
Stage: validate
Load the seven tables (from --input-dir or the synth stage), enforce the
integrity rules and write the canonical dataset used downstream.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Tuple

from coco.dataset import TABLE_SCHEMAS, Strictness, load_dataset, write_dataset
from stages.base import StageBase, stage_dataset_dir
from stages.table_formatter import TableFormatter

logger = logging.getLogger(__name__)


class Validate(StageBase):
    """Write dataset/*.csv (canonical) and validation_report.json."""

    name = "validate"
    order = 2
    requires = ("synth",)
    description = "Validate input tables and write the canonical dataset"

    def dependencies(self) -> Tuple[str, ...]:
        return () if self.config.input_dir else self.requires

    def source_dir(self) -> Path:
        if self.config.input_dir:
            return Path(self.config.input_dir)
        return stage_dataset_dir(self.output_root, "synth")

    def run(self, arguments: Dict[str, Any]) -> str:
        strictness = Strictness(arguments.get("strictness", self.config.strictness))
        source = self.source_dir()
        dataset = load_dataset(source, strictness)
        if self.config.input_dir:
            for name in TABLE_SCHEMAS:
                self.record_input(source / f"{name}.csv")

        for path in write_dataset(dataset, self.stage_dir / "dataset").values():
            self.declare(path)
        report = dataset.report
        self.write_json("validation_report.json", report.to_dict())
        if report.dropped_total:
            logger.warning(f"Dropped {report.dropped_total} row(s): {dict(sorted(report.dropped.items()))}")

        rows = [{"table": name, "rows": report.row_counts.get(name, 0)} for name in TABLE_SCHEMAS]
        output = [TableFormatter.format_as_table(rows, ["table", "rows"],
                                                 title=f"Validated Dataset ({strictness.value})")]
        if report.dropped:
            dropped = [{"reason": reason, "rows": count} for reason, count in sorted(report.dropped.items())]
            output.append(TableFormatter.format_as_table(dropped, ["reason", "rows"], title="Dropped Rows",
                                                         total_count=report.dropped_total))
        return "\n".join(output)
