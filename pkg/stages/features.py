"""
Stage: features
Build the labeled feature matrix from the validated dataset.
"""

import logging
from dataclasses import asdict
from datetime import timedelta
from typing import Any, Dict

from coco.centrality import SnapshotCache
from coco.dataset import Strictness, load_dataset
from coco.features import build_matrix
from coco.temporal_graph import GraphKind, build_graph, write_edge_list
from stages.base import StageBase, stage_dataset_dir
from stages.table_formatter import TableFormatter

logger = logging.getLogger(__name__)


class Features(StageBase):
    """Write features.csv and features.json; optionally final-snapshot edge lists."""

    name = "features"
    order = 3
    requires = ("validate",)
    description = "Compute content, network and demographic features per attendance event"

    def run(self, arguments: Dict[str, Any]) -> str:
        dataset = load_dataset(stage_dataset_dir(self.output_root, "validate"), Strictness.STRICT)
        options = self.config.feature_options()
        cache = SnapshotCache()
        matrix = build_matrix(dataset, cache=cache, options=options, n_jobs=self.config.n_jobs)
        for path in matrix.write(self.stage_dir).values():
            self.declare(path)

        if arguments.get("emit_graphs") and dataset.date_range is not None:
            after_last = dataset.date_range[1] + timedelta(days=1)
            for village_id in dataset.village_ids():
                for kind in GraphKind:
                    graph = build_graph(dataset, village_id, kind, attendee_cap=options.attendee_cap)
                    path = self.output_path(f"graphs/{village_id}_{kind.value}.csv")
                    self.declare(write_edge_list(graph.snapshot(after_last), path))

        frame = matrix.frame
        rows = []
        for state in matrix.states():
            in_state = frame[frame["state_id"] == state]
            rows.append({"state_id": state, "rows": len(in_state), "adoptions": int(in_state["label"].sum())})
        rows.append({"state_id": "ALL", "rows": len(frame), "adoptions": int(frame["label"].sum())})
        return TableFormatter.format_as_table(
            rows, ["state_id", "rows", "adoptions"],
            title=f"Feature Matrix ({len(matrix.feature_names)} features)")

    def parameters(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        options = asdict(self.config.feature_options())
        options["cs_reading"] = options["cs_reading"].value
        return {**options, "emit_graphs": bool(arguments.get("emit_graphs", False))}
