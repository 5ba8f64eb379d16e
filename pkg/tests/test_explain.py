"""Tests for coco.explain: TreeSHAP against brute-force Shapley values and the batch engine."""

from math import factorial

import numpy as np
import pytest

pytest.importorskip("shap")

from coco.errors import ExplainError  # noqa: E402
from coco.explain import (  # noqa: E402
    ShapBatch,
    dependency,
    expected_value,
    explain_matrix,
    explain_rows,
    shap_summary,
    summarize,
    tree_attributions,
    tree_shap,
)
from coco.learner import Forest, TreeArrays, tree_input, train_random_forest  # noqa: E402


def make_tree(left, right, feature, threshold, value, cover) -> TreeArrays:
    return TreeArrays(children_left=np.array(left), children_right=np.array(right),
                      feature=np.array(feature), threshold=np.array(threshold, dtype=np.float64),
                      value=np.array(value, dtype=np.float64), cover=np.array(cover, dtype=np.float64))


def stump() -> TreeArrays:
    return make_tree([1, -1, -1], [2, -1, -1], [0, -1, -1], [0.5, 0, 0], [0.0, 0.0, 1.0], [4, 3, 1])


def repeated_split_tree() -> TreeArrays:
    """Nine nodes; feature 0 is split twice on the right branch."""
    return make_tree(
        left=[1, 3, 5, -1, -1, 7, -1, -1, -1],
        right=[2, 4, 6, -1, -1, 8, -1, -1, -1],
        feature=[0, 1, 0, -1, -1, 2, -1, -1, -1],
        threshold=[0.5, 0.5, 1.5, 0, 0, 0, 0, 0, 0],
        value=[0, 0, 0, 0.1, 0.7, 0, 0.9, 0.2, 0.5],
        cover=[10, 6, 4, 2, 4, 3, 1, 1, 2],
    )


def conditional_value(tree: TreeArrays, x: np.ndarray, known: set, node: int = 0) -> float:
    """E[f | features in `known` fixed to x], splitting unknown features by cover."""
    if tree.children_left[node] < 0:
        return float(tree.value[node])
    left, right = int(tree.children_left[node]), int(tree.children_right[node])
    split = int(tree.feature[node])
    if split in known:
        return conditional_value(tree, x, known, left if x[split] <= tree.threshold[node] else right)
    return (tree.cover[left] * conditional_value(tree, x, known, left)
            + tree.cover[right] * conditional_value(tree, x, known, right)) / tree.cover[node]


def brute_force_shapley(tree: TreeArrays, x: np.ndarray, n_features: int) -> np.ndarray:
    """Exact Shapley values by enumerating every coalition, each evaluated once."""
    coalitions = 1 << n_features
    value = [conditional_value(tree, x, {j for j in range(n_features) if mask >> j & 1})
             for mask in range(coalitions)]
    weight = [factorial(k) * factorial(n_features - k - 1) / factorial(n_features) for k in range(n_features)]
    phi = np.zeros(n_features)
    for mask in range(coalitions):
        size = bin(mask).count("1")
        for i in range(n_features):
            if not mask >> i & 1:
                phi[i] += weight[size] * (value[mask | 1 << i] - value[mask])
    return phi


class TestReferenceRecursion:

    def test_stump(self):
        forest = Forest(["a", "b"], [stump()])
        explanation = tree_shap(forest, [1.0, 7.0])
        assert explanation.base_value == pytest.approx(0.25)
        np.testing.assert_allclose(explanation.values, [0.75, 0.0], atol=1e-12)
        assert explanation.prediction == 1.0
        assert tree_shap(forest, [0.0, 7.0]).values[0] == pytest.approx(-0.25)

    def test_single_leaf(self):
        leaf = make_tree([-1], [-1], [-1], [0.0], [0.3], [5.0])
        assert expected_value(leaf) == pytest.approx(0.3)
        np.testing.assert_array_equal(tree_attributions(leaf, np.array([1.0, 2.0]), 2), [0.0, 0.0])

    @pytest.mark.parametrize("x", [[0, 0, 0], [0, 1, 0], [1, 0, -1], [1, 0, 1], [2, 0, 0]])
    def test_repeated_split_matches_brute_force(self, x):
        tree = repeated_split_tree()
        x = np.array(x, dtype=np.float64)
        np.testing.assert_allclose(tree_attributions(tree, x, 3), brute_force_shapley(tree, x, 3), atol=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_random_forests_match_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n_features = 2 + seed % 9
        X = rng.normal(size=(60, n_features))
        y = (X[:, 0] + X[:, 1] * X[:, -1] + rng.normal(scale=0.3, size=60) > 0).astype(np.int64)
        names = [f"f{j}" for j in range(n_features)]
        forest = train_random_forest(X, y, names, trees=2 + seed % 2, max_depth=4, seed=seed)
        for x in tree_input(X[:2]):
            expected = np.mean([brute_force_shapley(tree, x, n_features) for tree in forest.trees], axis=0)
            explanation = tree_shap(forest, x)
            np.testing.assert_allclose(explanation.values, expected, atol=1e-9)
            assert abs(explanation.residual) < 1e-9

    def test_wrong_length(self):
        with pytest.raises(ExplainError):
            tree_shap(Forest(["a", "b"], [stump()]), [1.0])


@pytest.fixture(scope="module")
def small_forest(small_matrix) -> Forest:
    return train_random_forest(small_matrix.X, small_matrix.y, small_matrix.feature_names,
                               trees=3, max_depth=4, seed=1)


class TestBatchEngine:

    def test_engines_agree(self, small_forest, small_matrix):
        rows = small_matrix.take(range(20))
        batch = explain_matrix(small_forest, rows, engine="batch")
        reference = explain_matrix(small_forest, rows, engine="reference")
        np.testing.assert_allclose(batch.values, reference.values, atol=1e-9)
        assert batch.instance_ids[0] == f"{rows.frame['screening_id'][0]}:{rows.frame['farmer_id'][0]}"

    def test_additivity(self, small_forest, small_matrix):
        batch = explain_matrix(small_forest, small_matrix.take(range(50)))
        np.testing.assert_allclose(batch.base_value + batch.values.sum(axis=1), batch.predictions, atol=1e-9)

    def test_chunks_do_not_depend_on_workers(self, small_forest, small_matrix):
        X = small_matrix.X[:30]
        ids = [str(i) for i in range(30)]
        serial = explain_rows(small_forest, X, ids, chunk_rows=7)
        parallel = explain_rows(small_forest, X, ids, n_jobs=2, chunk_rows=7)
        np.testing.assert_array_equal(serial.values, parallel.values)

    def test_bad_input(self, small_forest, small_matrix):
        with pytest.raises(ExplainError):
            explain_rows(small_forest, small_matrix.X[:2], ["a", "b"], engine="kernel")
        with pytest.raises(ExplainError):
            explain_rows(small_forest, np.zeros((2, 3)), ["a", "b"])

    def test_catalogue_mismatch(self, small_matrix):
        forest = Forest(["a", "b"], [stump()])
        with pytest.raises(ExplainError):
            explain_matrix(forest, small_matrix)


class TestSummary:

    def hand_batch(self) -> ShapBatch:
        return ShapBatch(instance_ids=["r1", "r2"], feature_names=["a", "b"],
                         X=np.array([[0.0, 5.0], [1.0, 5.0]]),
                         values=np.array([[0.1, -0.3], [-0.1, 0.1]]),
                         base_value=0.2, predictions=np.array([0.0, 0.2]))

    def test_ranking_and_points(self):
        summary = summarize(self.hand_batch())
        assert summary.ranking["feature"].tolist() == ["b", "a"]
        assert summary.ranking["mean_abs_shap"].tolist() == pytest.approx([0.2, 0.1])
        assert summary.ranking["rank"].tolist() == [1, 2]
        points = summary.points
        assert len(points) == 4
        assert points.loc[points["feature"] == "a", "normalized_value"].tolist() == [0.0, 1.0]
        assert points.loc[points["feature"] == "b", "normalized_value"].tolist() == [0.5, 0.5]

    def test_dependency(self):
        series = dependency("a", self.hand_batch())
        assert series.slope == pytest.approx(-0.2)
        assert series.points["instance_id"].tolist() == ["r1", "r2"]
        with pytest.raises(ExplainError):
            dependency("b", self.hand_batch())
        with pytest.raises(ExplainError):
            dependency("zzz", self.hand_batch())

    def test_empty_sample(self):
        empty = ShapBatch([], ["a"], np.zeros((0, 1)), np.zeros((0, 1)), 0.0, np.zeros(0))
        with pytest.raises(ExplainError):
            summarize(empty)

    def test_shap_summary_cap(self, small_forest, small_matrix):
        first = shap_summary(small_forest, small_matrix, cap=20, seed=3)
        second = shap_summary(small_forest, small_matrix, cap=20, seed=3)
        assert len(first.batch) == 20
        assert len(first.points) == 20 * len(small_matrix.feature_names)
        assert first.batch.instance_ids == second.batch.instance_ids
        assert first.ranking.equals(second.ranking)
