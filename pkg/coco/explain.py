"""
Path-dependent TreeSHAP for the random forest.

Two engines compute the same attributions: a reference recursion over
TreeArrays (one instance at a time) and shap's compiled TreeExplainer fed
with the exported forest (whole batches). Explanations target the class-1
probability.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import shap
from joblib import Parallel, delayed
from scipy import stats

from coco.errors import ExplainError
from coco.features import FeatureMatrix
from coco.learner import Forest, TreeArrays, tree_input

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_CAP = 10_000
DEPENDENCY_FEATURES = ["duration", "cs_village", "cs_block", "cs_district"]
ENGINES = ("batch", "reference")


@dataclass
class ShapExplanation:
    instance_id: str
    base_value: float
    values: np.ndarray
    prediction: float

    @property
    def residual(self) -> float:
        return self.base_value + math.fsum(self.values) - self.prediction


@dataclass
class ShapBatch:
    """Attributions for a block of rows, aligned with feature_names."""
    instance_ids: List[str]
    feature_names: List[str]
    X: np.ndarray
    values: np.ndarray
    base_value: float
    predictions: np.ndarray

    def __len__(self) -> int:
        return len(self.instance_ids)

    def explanation(self, i: int) -> ShapExplanation:
        return ShapExplanation(self.instance_ids[i], self.base_value, self.values[i], float(self.predictions[i]))

    def column(self, feature: str) -> int:
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise ExplainError(f"unknown feature {feature!r}") from None


# =============================================================================
# REFERENCE RECURSION
# =============================================================================

def expected_value(tree: TreeArrays) -> float:
    """Cover-weighted mean leaf value."""
    leaves = tree.children_left < 0
    return float(np.dot(tree.cover[leaves], tree.value[leaves]) / tree.cover[0])


def _extend(path: List[list], zero_fraction: float, one_fraction: float, feature: int) -> List[list]:
    path = [list(element) for element in path]
    depth = len(path)
    path.append([feature, zero_fraction, one_fraction, 1.0 if depth == 0 else 0.0])
    for i in range(depth - 1, -1, -1):
        path[i + 1][3] += one_fraction * path[i][3] * (i + 1) / (depth + 1)
        path[i][3] = zero_fraction * path[i][3] * (depth - i) / (depth + 1)
    return path


def _unwind(path: List[list], index: int) -> List[list]:
    path = [list(element) for element in path]
    last = len(path) - 1
    _, zero_fraction, one_fraction, _ = path[index]
    carry = path[last][3]
    for j in range(last - 1, -1, -1):
        if one_fraction != 0:
            weight = path[j][3]
            path[j][3] = carry * (last + 1) / ((j + 1) * one_fraction)
            carry = weight - path[j][3] * zero_fraction * (last - j) / (last + 1)
        else:
            path[j][3] = path[j][3] * (last + 1) / (zero_fraction * (last - j))
    for j in range(index, last):
        path[j][0], path[j][1], path[j][2] = path[j + 1][0], path[j + 1][1], path[j + 1][2]
    return path[:last]


def _unwound_sum(path: List[list], index: int) -> float:
    return sum(element[3] for element in _unwind(path, index))


def tree_attributions(tree: TreeArrays, x: np.ndarray, n_features: int) -> np.ndarray:
    """Path-dependent TreeSHAP values of one tree for one instance."""
    phi = np.zeros(n_features)

    def recurse(node: int, path: List[list], zero_fraction: float, one_fraction: float, feature: int) -> None:
        path = _extend(path, zero_fraction, one_fraction, feature)
        if tree.children_left[node] < 0:
            for i in range(1, len(path)):
                weight = _unwound_sum(path, i)
                phi[path[i][0]] += weight * (path[i][2] - path[i][1]) * tree.value[node]
            return
        split = int(tree.feature[node])
        left, right = int(tree.children_left[node]), int(tree.children_right[node])
        hot, cold = (left, right) if x[split] <= tree.threshold[node] else (right, left)
        incoming_zero, incoming_one = 1.0, 1.0
        seen = next((k for k in range(1, len(path)) if path[k][0] == split), None)
        if seen is not None:
            incoming_zero, incoming_one = path[seen][1], path[seen][2]
            path = _unwind(path, seen)
        cover = tree.cover[node]
        recurse(hot, path, incoming_zero * tree.cover[hot] / cover, incoming_one, split)
        recurse(cold, path, incoming_zero * tree.cover[cold] / cover, 0.0, split)

    recurse(0, [], 1.0, 1.0, -1)
    return phi


def tree_shap(forest: Forest, instance: np.ndarray, instance_id: str = "") -> ShapExplanation:
    """
    Exact path-dependent TreeSHAP of the forest's class-1 probability:
    per-tree attributions averaged over trees.

    Raises:
        ExplainError: Instance length does not match the feature catalogue
    """
    x = np.asarray(instance, dtype=np.float64).ravel()
    n_features = len(forest.feature_names)
    if x.size != n_features:
        raise ExplainError(f"instance has {x.size} values, the forest expects {n_features}")
    x = tree_input(x[None, :])[0]
    phi = np.zeros(n_features)
    for tree in forest.trees:
        phi += tree_attributions(tree, x, n_features)
    phi /= forest.n_trees
    base = forest_expected_value(forest)
    prediction = float(forest.predict_proba(x[None, :])[0])
    return ShapExplanation(instance_id, base, phi, prediction)


def forest_expected_value(forest: Forest) -> float:
    return float(np.mean([expected_value(tree) for tree in forest.trees]))


# =============================================================================
# BATCH ENGINE
# =============================================================================

def shap_model(forest: Forest) -> Dict:
    """The forest in shap's tree dictionary format, leaf values pre-divided by tree count."""
    scale = 1.0 / forest.n_trees
    return {
        "tree_output": "raw_value",
        "base_offset": 0.0,
        "trees": [{
            "children_left": tree.children_left.astype(np.int32),
            "children_right": tree.children_right.astype(np.int32),
            "children_default": tree.children_left.astype(np.int32),
            "features": np.where(tree.feature < 0, 0, tree.feature).astype(np.int32),
            "thresholds": tree.threshold.astype(np.float64),
            "values": (tree.value * scale).reshape(-1, 1),
            "node_sample_weight": tree.cover.astype(np.float64),
        } for tree in forest.trees],
    }


def _batch_values(forest: Forest, X: np.ndarray) -> np.ndarray:
    explainer = shap.TreeExplainer(shap_model(forest), feature_perturbation="tree_path_dependent")
    values = np.asarray(explainer.shap_values(X, check_additivity=False), dtype=np.float64)
    if values.ndim == 3:
        values = values[:, :, 0]
    return values


def _reference_values(forest: Forest, X: np.ndarray) -> np.ndarray:
    n_features = len(forest.feature_names)
    out = np.zeros((X.shape[0], n_features))
    for i, x in enumerate(X):
        for tree in forest.trees:
            out[i] += tree_attributions(tree, x, n_features)
    return out / forest.n_trees


def explain_rows(forest: Forest, X: np.ndarray, instance_ids: Sequence[str],
                 engine: str = "batch", n_jobs: int = 1, chunk_rows: int = 2000) -> ShapBatch:
    """
    Attributions for many rows. Rows are split into fixed chunks, so results
    do not depend on n_jobs.
    """
    if engine not in ENGINES:
        raise ExplainError(f"unknown engine {engine!r} (expected one of {ENGINES})")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(forest.feature_names):
        raise ExplainError(f"rows have shape {X.shape}, the forest expects {len(forest.feature_names)} features")
    X = tree_input(X)
    worker = _batch_values if engine == "batch" else _reference_values
    chunks = [X[i:i + chunk_rows] for i in range(0, X.shape[0], chunk_rows)]
    if chunks:
        values = np.vstack(Parallel(n_jobs=n_jobs)(delayed(worker)(forest, chunk) for chunk in chunks))
    else:
        values = np.zeros((0, X.shape[1]))
    return ShapBatch(instance_ids=list(instance_ids), feature_names=list(forest.feature_names), X=X,
                     values=values, base_value=forest_expected_value(forest),
                     predictions=forest.predict_proba(X))


def explain_matrix(forest: Forest, matrix: FeatureMatrix, engine: str = "batch",
                   n_jobs: int = 1) -> ShapBatch:
    if matrix.feature_names != forest.feature_names:
        raise ExplainError("feature matrix catalogue does not match the forest")
    ids = (matrix.frame["screening_id"] + ":" + matrix.frame["farmer_id"]).tolist()
    return explain_rows(forest, matrix.X, ids, engine, n_jobs)


# =============================================================================
# SUMMARY AND DEPENDENCY
# =============================================================================

@dataclass
class ShapSummary:
    ranking: pd.DataFrame
    points: pd.DataFrame
    batch: ShapBatch


def summarize(batch: ShapBatch) -> ShapSummary:
    """Rank features by mean |attribution| and emit beeswarm points."""
    if len(batch) == 0:
        raise ExplainError("cannot summarize an empty sample")
    magnitude = np.abs(batch.values)
    means = [math.fsum(magnitude[:, j]) / len(batch) for j in range(len(batch.feature_names))]
    ranking = pd.DataFrame({"feature": batch.feature_names, "mean_abs_shap": means})
    ranking = ranking.sort_values(["mean_abs_shap", "feature"], ascending=[False, True], kind="mergesort")
    ranking.insert(0, "rank", np.arange(1, len(ranking) + 1))

    low, high = batch.X.min(axis=0), batch.X.max(axis=0)
    span = np.where(high > low, high - low, 1.0)
    normalized = np.where(high > low, (batch.X - low) / span, 0.5)
    points = pd.DataFrame({
        "feature": np.repeat(batch.feature_names, len(batch)),
        "instance_id": np.tile(batch.instance_ids, len(batch.feature_names)),
        "shap_value": batch.values.T.ravel(),
        "normalized_value": normalized.T.ravel(),
    })
    return ShapSummary(ranking=ranking.reset_index(drop=True), points=points, batch=batch)


def shap_summary(forest: Forest, sample: FeatureMatrix, cap: Optional[int] = DEFAULT_SAMPLE_CAP,
                 seed: int = 0, engine: str = "batch", n_jobs: int = 1) -> ShapSummary:
    """
    Summary over a sample, subsampled (seeded, order kept) to at most `cap`
    rows; cap=None explains every row.

    Raises:
        ExplainError: Empty sample
    """
    if len(sample) == 0:
        raise ExplainError("cannot summarize an empty sample")
    if cap is not None and len(sample) > cap:
        rng = np.random.default_rng(seed)
        sample = sample.take(np.sort(rng.choice(len(sample), size=cap, replace=False)))
    return summarize(explain_matrix(forest, sample, engine, n_jobs))


@dataclass
class DependencySeries:
    feature: str
    points: pd.DataFrame
    slope: float
    intercept: float
    r_value: float


def dependency(feature: str, batch: ShapBatch) -> DependencySeries:
    """
    Ordinary least squares of a feature's attribution on its value.

    Raises:
        ExplainError: Unknown or constant feature
    """
    j = batch.column(feature)
    values = batch.X[:, j]
    attributions = batch.values[:, j]
    if np.unique(values).size < 2:
        raise ExplainError(f"constant feature: {feature}")
    fit = stats.linregress(values, attributions)
    points = pd.DataFrame({"instance_id": batch.instance_ids, "value": values, "shap_value": attributions})
    return DependencySeries(feature, points, float(fit.slope), float(fit.intercept), float(fit.rvalue))
