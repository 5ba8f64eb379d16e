"""
Stage: explain
TreeSHAP summaries and dependency series for every trained forest.
"""

import logging
from typing import Any, Dict, List

import numpy as np

from coco.errors import ExplainError
from coco.explain import DEFAULT_SAMPLE_CAP, DEPENDENCY_FEATURES, dependency, shap_summary
from coco.features import FeatureMatrix
from coco.learner import Forest, SplitSpec, load_model, temporal_split
from stages.base import StageBase
from stages.table_formatter import TableFormatter
from stages.train import partition_matrix

logger = logging.getLogger(__name__)

TOP_FEATURES = 5


class Explain(StageBase):
    """Write <partition>/shap_report.json plus ranking, point and dependency CSVs."""

    name = "explain"
    order = 6
    requires = ("features", "train")
    description = "Explain random-forest predictions with path-dependent TreeSHAP"

    def forest_partitions(self) -> List[str]:
        outputs = self.upstream["train"]["outputs"]
        return sorted(rel.split("/")[1] for rel in outputs
                      if rel.startswith("models/") and rel.endswith("/random_forest.json"))

    def run(self, arguments: Dict[str, Any]) -> str:
        options = self.parameters(arguments)
        matrix = FeatureMatrix.read(self.upstream_dir("features"))
        split = SplitSpec.from_dict(self.upstream["train"]["parameters"]["split"])

        rows = []
        for partition in self.forest_partitions():
            forest = load_model(self.upstream_dir("train") / "models" / partition / "random_forest.json")
            if not isinstance(forest, Forest):
                raise ExplainError(f"models/{partition}/random_forest.json does not hold a random forest")
            train, test = temporal_split(partition_matrix(matrix, partition), split)
            sample = test if options["rows"] == "test" else train
            summary = shap_summary(forest, sample, options["sample_cap"], options["seed"],
                                   options["engine"], self.config.n_jobs)
            batch = summary.batch
            residuals = np.abs(batch.base_value + batch.values.sum(axis=1) - batch.predictions)
            max_residual = float(residuals.max()) if residuals.size else 0.0
            if max_residual >= 1e-9:
                logger.warning(f"[{partition}] SHAP additivity residual {max_residual:.3g}")

            self.write_frame(f"{partition}/shap_ranking.csv", summary.ranking)
            self.write_frame(f"{partition}/shap_points.csv", summary.points)
            slopes: Dict[str, Dict[str, Any]] = {}
            for feature in options["dependency_features"]:
                try:
                    series = dependency(feature, batch)
                except ExplainError as e:
                    logger.warning(f"[{partition}] no dependency series for {feature}: {e}")
                    slopes[feature] = {"error": str(e)}
                    continue
                self.write_frame(f"{partition}/dependency_{feature}.csv", series.points)
                slopes[feature] = {"slope": series.slope, "intercept": series.intercept,
                                   "r_value": series.r_value}

            self.write_json(f"{partition}/shap_report.json", {
                "partition": partition,
                "rows": options["rows"],
                "engine": options["engine"],
                "n_explained": len(batch),
                "base_value": batch.base_value,
                "max_additivity_residual": max_residual,
                "ranking": summary.ranking.to_dict(orient="records"),
                "dependency": slopes,
            })
            top = summary.ranking.head(TOP_FEATURES)
            rows.append({"partition": partition, "n": len(batch), "base": batch.base_value,
                         "top_features": ", ".join(top["feature"]),
                         "duration_slope": slopes.get("duration", {}).get("slope")})

        return TableFormatter.format_as_table(
            rows, ["partition", "n", "base", "top_features", "duration_slope"], title="SHAP Summary")

    def parameters(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        return {
            "engine": arguments.get("engine", "batch"),
            "rows": arguments.get("rows", "test"),
            "sample_cap": arguments.get("sample_cap", DEFAULT_SAMPLE_CAP),
            "seed": self.config.stage_seed("explain"),
            "dependency_features": list(arguments.get("dependency_features", DEPENDENCY_FEATURES)),
        }
