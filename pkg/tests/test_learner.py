"""Tests for coco.learner: split, downsampling, the three classifiers and evaluation."""

import logging
import math

import numpy as np
import pytest

from coco.dataset import Dataset
from coco.errors import EmptySplitError, FeatureError, SingleClassError
from coco.features import FeatureMatrix, build_matrix
from coco.learner import (
    BoostedTrees,
    Forest,
    LogisticModel,
    SplitSpec,
    TrainParams,
    TreeArrays,
    downsample_majority,
    downsample_positions,
    evaluate_predictions,
    load_model,
    logistic_loss_and_grad,
    model_from_dict,
    temporal_split,
    train_gbt,
    train_logistic,
    train_partition,
    train_random_forest,
    tree_input,
)
from tests.conftest import make_tables


@pytest.fixture(scope="module")
def toy_matrix() -> FeatureMatrix:
    return build_matrix(Dataset.from_tables(make_tables()))


def xor_data(n: int, seed: int):
    rng = np.random.default_rng(seed)
    corners = rng.integers(0, 2, size=(n, 2))
    X = corners + rng.uniform(-0.2, 0.2, size=(n, 2))
    y = (corners[:, 0] ^ corners[:, 1]).astype(np.int64)
    return X, y


def box_data(n: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, 2))
    y = ((X[:, 0] > 0.3) & (X[:, 1] < 0.5)).astype(np.int64)
    return X, y


def logistic_data(n: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (rng.random(n) < 1 / (1 + np.exp(-(0.5 + 1.5 * X[:, 0] - 2.0 * X[:, 1])))).astype(np.int64)
    return X, y


def squared_error(values: np.ndarray) -> float:
    return float(((values - values.mean()) ** 2).sum()) if values.size else 0.0


def best_split_error(X: np.ndarray, residual: np.ndarray) -> float:
    """Smallest child squared error over every feature and every midpoint."""
    best = math.inf
    for j in range(X.shape[1]):
        levels = np.unique(X[:, j])
        for low, high in zip(levels[:-1], levels[1:]):
            left = X[:, j] <= (low + high) / 2
            best = min(best, squared_error(residual[left]) + squared_error(residual[~left]))
    return best


class TestSplit:

    @pytest.mark.parametrize("cutoff, sizes", [(0.8, (9, 1)), (0.5, (5, 5)), (0.3, (3, 7))])
    def test_boundary_date_goes_to_train(self, toy_matrix, cutoff, sizes):
        train, test = temporal_split(toy_matrix, SplitSpec(cutoff_fraction=cutoff))
        assert (len(train), len(test)) == sizes
        assert train.frame["date"].max() < test.frame["date"].min()

    def test_empty_test(self, toy_matrix):
        with pytest.raises(EmptySplitError):
            temporal_split(toy_matrix, SplitSpec(cutoff_fraction=0.95))

    def test_split_spec_validation(self):
        assert SplitSpec(cutoff_fraction=1.0).validate() == ["split.cutoff_fraction must be in (0, 1)"]
        assert SplitSpec.from_dict({"seed": 3}).seed == 3


class TestDownsampling:

    def test_keeps_minority(self):
        labels = np.array([1, 0, 0, 0, 1, 0, 0])
        kept = downsample_positions(labels, seed=1)
        assert len(kept) == 4
        assert {0, 4} <= set(kept.tolist())
        assert (np.diff(kept) > 0).all()
        np.testing.assert_array_equal(kept, downsample_positions(labels, seed=1))

    def test_balanced_input_untouched(self):
        np.testing.assert_array_equal(downsample_positions(np.array([0, 1, 1, 0]), 0), np.arange(4))

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            downsample_positions(np.zeros(5, dtype=np.int64), 0)

    def test_matrix(self, toy_matrix):
        train, _ = temporal_split(toy_matrix, SplitSpec(cutoff_fraction=0.8))
        balanced = downsample_majority(train, seed=0)
        assert balanced.y.sum() * 2 == len(balanced)


class TestLogistic:

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(30, 3))
        y = rng.integers(0, 2, size=30).astype(np.float64)
        params = rng.normal(size=4)
        _, grad = logistic_loss_and_grad(params, Z, y, 0.1)
        eps = 1e-6
        for i in range(params.size):
            step = np.zeros_like(params)
            step[i] = eps
            numeric = (logistic_loss_and_grad(params + step, Z, y, 0.1)[0]
                       - logistic_loss_and_grad(params - step, Z, y, 0.1)[0]) / (2 * eps)
            assert grad[i] == pytest.approx(numeric, abs=1e-7)

    def test_recovers_planted_coefficients(self):
        X, y = logistic_data(6000, seed=2)
        model = train_logistic(X, y, ["a", "b"])
        assert model.converged
        np.testing.assert_allclose(model.coef, [1.5, -2.0], atol=0.25)
        assert model.intercept == pytest.approx(0.5, abs=0.2)

    def test_constant_column_gets_zero_weight(self):
        X, y = logistic_data(500, seed=3)
        X = np.column_stack([X, np.full(len(X), 4.0)])
        model = train_logistic(X, y, ["a", "b", "c"])
        assert model.coef[2] == 0.0

    def test_constant_features_predict_the_prior(self):
        X = np.full((8, 2), 3.0)
        y = np.array([1, 1, 0, 0, 0, 0, 0, 0])
        model = train_logistic(X, y, ["a", "b"])
        np.testing.assert_allclose(model.coef, [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(model.predict_proba(X), 0.25, atol=1e-4)


class TestTrees:

    def test_tree_arrays_predict(self):
        stump = TreeArrays(children_left=np.array([1, -1, -1]), children_right=np.array([2, -1, -1]),
                           feature=np.array([0, -1, -1]), threshold=np.array([0.5, 0.0, 0.0]),
                           value=np.array([0.0, 0.2, 0.9]), cover=np.array([4.0, 3.0, 1.0]))
        np.testing.assert_array_equal(stump.predict(np.array([[0.1], [0.5], [0.7]])), [0.2, 0.2, 0.9])
        assert stump.used_features() == [0]

    def test_forest_is_deterministic(self):
        X, y = xor_data(200, seed=4)
        first = train_random_forest(X, y, ["a", "b"], trees=6, seed=9)
        second = train_random_forest(X, y, ["a", "b"], trees=6, seed=9)
        parallel = train_random_forest(X, y, ["a", "b"], trees=6, seed=9, n_jobs=2)
        assert first.to_dict() == second.to_dict() == parallel.to_dict()
        other = train_random_forest(X, y, ["a", "b"], trees=6, seed=10)
        assert other.to_dict() != first.to_dict()

    def test_forest_learns_xor(self):
        X, y = xor_data(400, seed=5)
        forest = train_random_forest(X, y, ["a", "b"], trees=25, seed=1)
        X_new, y_new = xor_data(200, seed=6)
        assert (forest.predict(X_new) == y_new).mean() >= 0.95
        probabilities = forest.predict_proba(X_new)
        assert ((probabilities >= 0) & (probabilities <= 1)).all()

    def test_single_class_forest_warns(self, caplog):
        X = np.arange(10, dtype=np.float64).reshape(5, 2)
        with caplog.at_level(logging.WARNING, logger="coco.learner"):
            forest = train_random_forest(X, np.zeros(5), ["a", "b"], trees=3)
        assert "single class" in caplog.text
        np.testing.assert_array_equal(forest.predict_proba(X), np.zeros(5))

    def test_gbt(self):
        X, y = box_data(600, seed=7)
        model = train_gbt(X, y, ["a", "b"], stages=30, learning_rate=0.3, max_depth=3)
        assert model.base_score == pytest.approx(math.log(y.mean() / (1 - y.mean())))
        assert len(model.train_loss) == 31
        assert model.train_loss[-1] < 0.5 * model.train_loss[0]
        X_new, y_new = box_data(300, seed=8)
        assert (model.predict(X_new) == y_new).mean() >= 0.95

    def test_gbt_single_class(self):
        with pytest.raises(SingleClassError):
            train_gbt(np.zeros((4, 1)), np.ones(4), ["a"])

    def test_gbt_without_stages_predicts_the_prior(self):
        X, y = box_data(50, seed=9)
        model = train_gbt(X, y, ["a", "b"], stages=0)
        assert model.trees == []
        np.testing.assert_allclose(model.predict_proba(X), y.mean(), rtol=1e-12)

    def test_first_stage_matches_exhaustive_search(self):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(20, 3))
        y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(scale=0.5, size=20) > 0).astype(np.int64)
        assert 0 < y.sum() < y.size
        tree = train_gbt(X, y, ["a", "b", "c"], stages=1, max_depth=3).trees[0]

        X = tree_input(X)
        prior = y.mean()
        residual = y - prior
        pending = [(0, np.arange(y.size), 0)]
        while pending:
            node, rows, depth = pending.pop()
            r = residual[rows]
            if tree.is_leaf(node):
                newton = r.sum() / (prior * (1.0 - prior) * rows.size)
                assert tree.value[node] == pytest.approx(newton, rel=1e-9, abs=1e-9)
                if depth < 3:
                    # stopped early: nothing left to separate
                    assert np.ptp(r) == 0 or (np.ptp(X[rows], axis=0) == 0).all()
                continue
            left = X[rows, tree.feature[node]] <= tree.threshold[node]
            achieved = squared_error(r[left]) + squared_error(r[~left])
            assert achieved == pytest.approx(best_split_error(X[rows], r), rel=1e-9, abs=1e-12)
            pending.append((tree.children_left[node], rows[left], depth + 1))
            pending.append((tree.children_right[node], rows[~left], depth + 1))


class TestSerialization:

    @pytest.mark.parametrize("kind", ["logistic", "random_forest", "gbt"])
    def test_save_and_load(self, kind, tmp_path):
        X, y = xor_data(120, seed=12)
        names = ["a", "b"]
        model = {"logistic": lambda: train_logistic(X, y, names),
                 "random_forest": lambda: train_random_forest(X, y, names, trees=4, seed=2),
                 "gbt": lambda: train_gbt(X, y, names, stages=4)}[kind]()
        loaded = load_model(model.save(tmp_path / f"{kind}.json"))
        assert type(loaded) is type(model)
        np.testing.assert_array_equal(loaded.predict_proba(X), model.predict_proba(X))

    def test_unknown_kind_and_version(self):
        with pytest.raises(FeatureError):
            model_from_dict({"kind": "svm", "version": 1})
        data = LogisticModel(["a"], np.array([1.0]), 0.0).to_dict()
        data["version"] = 99
        with pytest.raises(FeatureError):
            model_from_dict(data)

    def test_catalogue_mismatch(self, toy_matrix):
        model = LogisticModel(toy_matrix.feature_names, np.zeros(len(toy_matrix.feature_names)), 0.0)
        frame = toy_matrix.frame.rename(columns={"lang_L2": "lang_L3"})
        other = FeatureMatrix(frame, ["L1", "L3"])
        with pytest.raises(FeatureError):
            model.predict_proba(other)
        with pytest.raises(FeatureError):
            model.predict_proba(np.zeros((2, 3)))
        assert model.predict_proba(toy_matrix).shape == (len(toy_matrix),)


class TestEvaluation:

    def test_macro_f1_and_tn_rate(self):
        report = evaluate_predictions([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
        assert (report.tp, report.fp, report.tn, report.fn) == (2, 1, 1, 1)
        assert report.macro_f1 == pytest.approx(0.58333, abs=1e-5)
        assert report.tn_rate == 0.5
        assert report.to_dict()["n"] == 5

    def test_no_negatives(self):
        report = evaluate_predictions([1, 1], [1, 0])
        assert report.tn_rate == 0.0

    def test_even_confusion(self):
        y_true = [1] * 10 + [0] * 10
        y_pred = [1] * 5 + [0] * 5 + [1] * 5 + [0] * 5
        report = evaluate_predictions(y_true, y_pred)
        assert (report.tp, report.fn, report.fp, report.tn) == (5, 5, 5, 5)
        assert report.macro_f1 == pytest.approx(0.5)
        assert report.tn_rate == pytest.approx(0.5)

    def test_perfect_predictions(self):
        y = [1, 0, 0, 1, 0]
        report = evaluate_predictions(y, y)
        assert report.macro_f1 == 1.0
        assert report.tn_rate == 1.0

    def test_train_partition(self, small_matrix):
        params = TrainParams(trees=5, gbt_stages=5)
        outcome = train_partition("ALL", small_matrix, SplitSpec(), params, seed=0)
        assert sorted(outcome.models) == ["gbt", "logistic", "random_forest"]
        assert isinstance(outcome.models["random_forest"], Forest)
        assert isinstance(outcome.models["gbt"], BoostedTrees)
        counts = outcome.class_counts
        assert counts["balanced_adoption"] == counts["balanced_no_adoption"]
        assert counts["train_adoption"] + counts["train_no_adoption"] + counts["test_adoption"] \
            + counts["test_no_adoption"] == len(small_matrix)
        for report in outcome.reports.values():
            assert report.n == len(outcome.test)
            assert 0.0 <= report.macro_f1 <= 1.0
