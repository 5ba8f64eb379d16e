"""
Stage: train
Chronological split, majority downsampling and the three classifiers, per
state and pooled.
"""

import logging
from dataclasses import asdict
from typing import Any, Dict, List

import pandas as pd

from coco.errors import EmptySplitError, InsufficientSampleError, SingleClassError
from coco.features import FeatureMatrix
from coco.learner import train_partition
from config import PARTITION_ALL
from stages.base import StageBase, StageError, partition_names
from stages.table_formatter import TableFormatter

logger = logging.getLogger(__name__)


def partition_matrix(matrix: FeatureMatrix, name: str) -> FeatureMatrix:
    return matrix if name == PARTITION_ALL else matrix.for_state(name)


class Train(StageBase):
    """Write models/<partition>/<kind>.json, eval_report.json and class_distribution.csv."""

    name = "train"
    order = 5
    requires = ("features",)
    description = "Train logistic, random-forest and boosted-tree classifiers per state and pooled"

    def run(self, arguments: Dict[str, Any]) -> str:
        matrix = FeatureMatrix.read(self.upstream_dir("features"))
        split = self.config.split_spec()
        params = self.config.train_params()
        seed = self.config.stage_seed("train")

        reports: Dict[str, Dict[str, Any]] = {}
        skipped: Dict[str, str] = {}
        distribution: List[Dict[str, Any]] = []
        rows: List[Dict[str, Any]] = []
        for partition in partition_names(matrix.states(), arguments.get("partitions")):
            part = partition_matrix(matrix, partition)
            try:
                outcome = train_partition(partition, part, split, params, seed, self.config.n_jobs)
            except (EmptySplitError, SingleClassError, InsufficientSampleError) as e:
                logger.warning(f"Partition {partition} skipped: {e}")
                skipped[partition] = str(e)
                continue
            distribution.append({"partition": partition, **outcome.class_counts})
            reports[partition] = {kind: report.to_dict() for kind, report in outcome.reports.items()}
            for kind, model in outcome.models.items():
                self.declare(model.save(self.output_path(f"models/{partition}/{kind}.json")))
                report = outcome.reports[kind]
                rows.append({"partition": partition, "model": kind, "macro_f1": report.macro_f1,
                             "tn_rate": report.tn_rate, "n_test": report.n})

        if not reports:
            raise StageError(f"no partition could be trained: {skipped}")

        self.write_json("eval_report.json", {"partitions": reports, "skipped": skipped,
                                             "threshold": 0.5, "metrics": ["macro_f1", "tn_rate"]})
        self.write_frame("class_distribution.csv", pd.DataFrame(distribution))

        return TableFormatter.format_as_table(rows, ["partition", "model", "macro_f1", "tn_rate", "n_test"],
                                              title="Classifier Evaluation")

    def parameters(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        return {
            "split": asdict(self.config.split_spec()),
            "train": asdict(self.config.train_params()),
            "seed": self.config.stage_seed("train"),
            "partitions": arguments.get("partitions"),
        }
