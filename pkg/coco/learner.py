"""
Adoption classifiers: chronological split, majority downsampling, logistic
regression, random forest and gradient-boosted trees, with macro-F1 and
true-negative-rate evaluation.

Forest and boosted trees are grown with scikit-learn and exported to plain
arrays (TreeArrays); prediction, serialization and TreeSHAP all run on those
arrays.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import optimize, special
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

from coco.errors import EmptySplitError, FeatureError, InsufficientSampleError, SingleClassError
from coco.features import FeatureMatrix

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
THRESHOLD = 0.5


@dataclass
class SplitSpec:
    cutoff_fraction: float = 0.8
    seed: int = 0
    downsample: bool = True

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "SplitSpec":
        return cls(**(data or {}))

    def validate(self) -> List[str]:
        problems = []
        if not 0.0 < self.cutoff_fraction < 1.0:
            problems.append("split.cutoff_fraction must be in (0, 1)")
        return problems


@dataclass
class TrainParams:
    trees: int = 25
    max_depth: Optional[int] = None
    gbt_stages: int = 25
    gbt_learning_rate: float = 0.1
    gbt_max_depth: int = 3
    logistic_l2: float = 1e-6
    logistic_tol: float = 1e-8
    logistic_max_iter: int = 1000

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "TrainParams":
        return cls(**(data or {}))


def catalogue_hash(feature_names: Sequence[str]) -> str:
    return hashlib.sha256(json.dumps(list(feature_names)).encode("utf-8")).hexdigest()


# =============================================================================
# SPLIT AND RESAMPLING
# =============================================================================

def temporal_split(matrix: FeatureMatrix, spec: SplitSpec) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """
    First ceil(cutoff * N) date-ordered rows train, the rest test; rows that
    share the boundary date all go to train.

    Raises:
        EmptySplitError: Either side would be empty
    """
    n = len(matrix)
    if n == 0:
        raise EmptySplitError("empty train: the feature matrix has no rows")
    dates = matrix.dates
    order = np.argsort(dates, kind="stable")
    ordered = dates[order]
    k = max(1, math.ceil(spec.cutoff_fraction * n - 1e-9))
    boundary = ordered[k - 1]
    cut = int(np.searchsorted(ordered, boundary, side="right"))
    if cut >= n:
        raise EmptySplitError(f"empty test: every row is dated on or before {boundary}")
    return matrix.take(order[:cut]), matrix.take(order[cut:])


def downsample_positions(labels: np.ndarray, seed: int) -> np.ndarray:
    """
    Row positions kept after subsampling the majority class to the minority
    size, in original order.

    Raises:
        SingleClassError: Only one class present
    """
    labels = np.asarray(labels)
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    if positives.size == 0 or negatives.size == 0:
        raise SingleClassError("downsampling needs both classes in the training set")
    if positives.size == negatives.size:
        return np.arange(labels.size)
    minority, majority = (positives, negatives) if positives.size < negatives.size else (negatives, positives)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(majority, size=minority.size, replace=False)
    return np.sort(np.concatenate([minority, chosen]))


def downsample_majority(train: FeatureMatrix, seed: int) -> FeatureMatrix:
    """Balanced copy of the training matrix; the minority class is untouched."""
    positions = downsample_positions(train.y, seed)
    if positions.size == len(train):
        return train
    return train.take(positions)


# =============================================================================
# MODELS
# =============================================================================

class AdoptionModel:
    """Common interface: class-1 probabilities over a fixed feature catalogue."""
    kind = "model"

    def __init__(self, feature_names: Sequence[str]):
        self.feature_names = list(feature_names)

    def _features(self, data: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
        if isinstance(data, FeatureMatrix):
            if data.feature_names != self.feature_names:
                unseen = sorted(set(data.feature_names) - set(self.feature_names))
                raise FeatureError(f"feature catalogue mismatch (unseen columns: {unseen or 'order differs'})")
            return data.X
        X = np.asarray(data, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise FeatureError(f"expected {len(self.feature_names)} feature columns, got shape {X.shape}")
        return X

    def predict_proba(self, data: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
        raise NotImplementedError("Subclasses must implement predict_proba()")

    def predict(self, data: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
        return (self.predict_proba(data) >= THRESHOLD).astype(np.int64)

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError("Subclasses must implement to_dict()")

    def _header(self) -> Dict[str, Any]:
        return {"kind": self.kind, "version": MODEL_VERSION, "feature_names": self.feature_names,
                "catalogue_sha256": catalogue_hash(self.feature_names)}

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=1, sort_keys=True)
            handle.write("\n")
        return path


# -----------------------------------------------------------------------------
# Logistic regression
# -----------------------------------------------------------------------------

def logistic_loss_and_grad(params: np.ndarray, Z: np.ndarray, y: np.ndarray,
                           l2: float) -> Tuple[float, np.ndarray]:
    """Mean log-loss with an L2 penalty on the weights; params = [w..., b]."""
    w, b = params[:-1], params[-1]
    z = Z @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))
    residual = special.expit(z) - y
    grad = np.empty_like(params)
    grad[:-1] = Z.T @ residual / len(y) + l2 * w
    grad[-1] = residual.mean()
    return loss, grad


class LogisticModel(AdoptionModel):
    kind = "logistic"

    def __init__(self, feature_names: Sequence[str], coef: np.ndarray, intercept: float,
                 converged: bool = True, gradient_norm: float = 0.0, iterations: int = 0):
        super().__init__(feature_names)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = float(intercept)
        self.converged = converged
        self.gradient_norm = gradient_norm
        self.iterations = iterations

    def predict_proba(self, data) -> np.ndarray:
        return special.expit(self._features(data) @ self.coef + self.intercept)

    def to_dict(self) -> Dict[str, Any]:
        return {**self._header(), "coef": self.coef.tolist(), "intercept": self.intercept,
                "converged": self.converged, "gradient_norm": self.gradient_norm, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LogisticModel":
        return cls(data["feature_names"], np.array(data["coef"]), data["intercept"],
                   data["converged"], data["gradient_norm"], data["iterations"])


def train_logistic(X: np.ndarray, y: np.ndarray, feature_names: Sequence[str],
                   l2: float = 1e-6, tol: float = 1e-8, max_iter: int = 1000) -> LogisticModel:
    """
    Logistic regression by L-BFGS on standardized features; the returned
    coefficients are folded back to the raw feature scale.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd

    result = optimize.minimize(logistic_loss_and_grad, np.zeros(X.shape[1] + 1), args=(Z, y, l2),
                               jac=True, method="L-BFGS-B",
                               options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15})
    _, grad = logistic_loss_and_grad(result.x, Z, y, l2)
    grad_norm = float(np.linalg.norm(grad))
    converged = bool(result.success) or grad_norm < max(tol, 1e-6)
    if not converged:
        logger.warning(f"Logistic regression did not converge: {result.message} (gradient norm {grad_norm:.3g})")
    w, b = result.x[:-1], result.x[-1]
    coef = w / sd
    intercept = float(b - np.dot(coef, mu))
    return LogisticModel(feature_names, coef, intercept, converged, grad_norm, int(result.nit))


# -----------------------------------------------------------------------------
# Tree arrays
# -----------------------------------------------------------------------------

@dataclass
class TreeArrays:
    """A fitted binary tree as flat arrays; leaves have children == -1."""
    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.children_left.size)

    def is_leaf(self, node: int) -> bool:
        return self.children_left[node] < 0

    def used_features(self) -> List[int]:
        return sorted({int(f) for f, left in zip(self.feature, self.children_left) if left >= 0})

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Leaf value reached by every row; a row goes left when x <= threshold."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            left = self.children_left[node]
            active = np.flatnonzero(left >= 0)
            if active.size == 0:
                return self.value[node]
            at = node[active]
            go_left = X[active, self.feature[at]] <= self.threshold[at]
            node[active] = np.where(go_left, self.children_left[at], self.children_right[at])

    def to_dict(self) -> Dict[str, List]:
        return {name: getattr(self, name).tolist() for name in
                ("children_left", "children_right", "feature", "threshold", "value", "cover")}

    @classmethod
    def from_dict(cls, data: Dict[str, List]) -> "TreeArrays":
        return cls(children_left=np.array(data["children_left"], dtype=np.int64),
                   children_right=np.array(data["children_right"], dtype=np.int64),
                   feature=np.array(data["feature"], dtype=np.int64),
                   threshold=np.array(data["threshold"], dtype=np.float64),
                   value=np.array(data["value"], dtype=np.float64),
                   cover=np.array(data["cover"], dtype=np.float64))

    @classmethod
    def from_sklearn(cls, estimator, value: np.ndarray) -> "TreeArrays":
        tree = estimator.tree_
        leaves = tree.children_left < 0
        return cls(children_left=np.where(leaves, -1, tree.children_left).astype(np.int64),
                   children_right=np.where(leaves, -1, tree.children_right).astype(np.int64),
                   feature=np.where(leaves, -1, tree.feature).astype(np.int64),
                   threshold=np.where(leaves, 0.0, tree.threshold).astype(np.float64),
                   value=np.asarray(value, dtype=np.float64),
                   cover=tree.n_node_samples.astype(np.float64))


def tree_input(X: np.ndarray) -> np.ndarray:
    """Rows as the tree learner sees them (single precision, widened back)."""
    return np.asarray(X, dtype=np.float32).astype(np.float64)


def _class_one_value(estimator: DecisionTreeClassifier) -> np.ndarray:
    counts = estimator.tree_.value[:, 0, :]
    fractions = counts / counts.sum(axis=1, keepdims=True)
    classes = list(estimator.classes_)
    if 1 in classes:
        return fractions[:, classes.index(1)]
    return np.zeros(fractions.shape[0])


# -----------------------------------------------------------------------------
# Random forest
# -----------------------------------------------------------------------------

def _grow_tree(X: np.ndarray, y: np.ndarray, seed: np.random.SeedSequence,
               max_depth: Optional[int]) -> TreeArrays:
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, X.shape[0], size=X.shape[0])
    estimator = DecisionTreeClassifier(criterion="gini", max_features="sqrt", max_depth=max_depth,
                                       min_samples_leaf=1, random_state=int(seed.generate_state(1)[0]))
    estimator.fit(X[rows], y[rows])
    return TreeArrays.from_sklearn(estimator, _class_one_value(estimator))


class Forest(AdoptionModel):
    kind = "random_forest"

    def __init__(self, feature_names: Sequence[str], trees: List[TreeArrays], seed: int = 0,
                 tree_seeds: Optional[List[int]] = None):
        super().__init__(feature_names)
        self.trees = list(trees)
        self.seed = seed
        self.tree_seeds = list(tree_seeds or [])

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba(self, data) -> np.ndarray:
        X = tree_input(self._features(data))
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> Dict[str, Any]:
        return {**self._header(), "seed": self.seed, "tree_seeds": self.tree_seeds,
                "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Forest":
        return cls(data["feature_names"], [TreeArrays.from_dict(t) for t in data["trees"]],
                   data.get("seed", 0), data.get("tree_seeds"))


def train_random_forest(X: np.ndarray, y: np.ndarray, feature_names: Sequence[str],
                        trees: int = 25, max_depth: Optional[int] = None, seed: int = 0,
                        n_jobs: int = 1) -> Forest:
    """
    Bootstrap forest of Gini trees with sqrt(num_features) candidates per
    split. Per-tree seeds are spawned from `seed`, so the forest does not
    depend on n_jobs.
    """
    X = tree_input(X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] < 2:
        raise InsufficientSampleError("random forest needs at least 2 training rows")
    if np.unique(y).size < 2:
        logger.warning("Random forest trained on a single class; predictions will be constant")
    children = np.random.SeedSequence(seed).spawn(trees)
    grown = Parallel(n_jobs=n_jobs)(delayed(_grow_tree)(X, y, child, max_depth) for child in children)
    tree_seeds = [int(child.generate_state(1)[0]) for child in children]
    return Forest(feature_names, grown, seed, tree_seeds)


# -----------------------------------------------------------------------------
# Gradient-boosted trees
# -----------------------------------------------------------------------------

class BoostedTrees(AdoptionModel):
    kind = "gbt"

    def __init__(self, feature_names: Sequence[str], base_score: float, learning_rate: float,
                 trees: List[TreeArrays], train_loss: Optional[List[float]] = None):
        super().__init__(feature_names)
        self.base_score = float(base_score)
        self.learning_rate = float(learning_rate)
        self.trees = list(trees)
        self.train_loss = list(train_loss or [])

    def decision_function(self, data) -> np.ndarray:
        X = tree_input(self._features(data))
        raw = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            raw += self.learning_rate * tree.predict(X)
        return raw

    def predict_proba(self, data) -> np.ndarray:
        return special.expit(self.decision_function(data))

    def to_dict(self) -> Dict[str, Any]:
        return {**self._header(), "base_score": self.base_score, "learning_rate": self.learning_rate,
                "train_loss": self.train_loss, "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoostedTrees":
        return cls(data["feature_names"], data["base_score"], data["learning_rate"],
                   [TreeArrays.from_dict(t) for t in data["trees"]], data.get("train_loss"))


def _log_loss(y: np.ndarray, raw: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def train_gbt(X: np.ndarray, y: np.ndarray, feature_names: Sequence[str], stages: int = 25,
              learning_rate: float = 0.1, max_depth: int = 3, seed: int = 0) -> BoostedTrees:
    """
    Gradient boosting on the logistic loss: each stage fits a depth-limited
    regression tree to the residuals y - p and sets Newton leaf values
    sum(residual) / sum(p(1-p)).

    Raises:
        SingleClassError: Only one class present
    """
    X = tree_input(X)
    y = np.asarray(y, dtype=np.float64)
    prior = y.mean() if y.size else 0.0
    if not 0.0 < prior < 1.0:
        raise SingleClassError("gradient boosting needs both classes in the training set")
    raw = np.full(y.size, math.log(prior / (1.0 - prior)))
    base_score = float(raw[0])
    losses = [_log_loss(y, raw)]
    trees = []
    stage_seeds = np.random.SeedSequence(seed).generate_state(max(stages, 1))
    for stage in range(stages):
        p = special.expit(raw)
        residual = y - p
        hessian = p * (1.0 - p)
        regressor = DecisionTreeRegressor(max_depth=max_depth, random_state=int(stage_seeds[stage]))
        regressor.fit(X, residual)
        leaves = regressor.apply(X)
        value = np.zeros(regressor.tree_.node_count)
        for leaf in np.unique(leaves):
            rows = leaves == leaf
            value[leaf] = residual[rows].sum() / max(hessian[rows].sum(), 1e-12)
        tree = TreeArrays.from_sklearn(regressor, value)
        trees.append(tree)
        raw = raw + learning_rate * value[leaves]
        losses.append(_log_loss(y, raw))
    return BoostedTrees(feature_names, base_score, learning_rate, trees, losses)


MODEL_KINDS = {cls.kind: cls for cls in (LogisticModel, Forest, BoostedTrees)}


def model_from_dict(data: Dict[str, Any]) -> AdoptionModel:
    kind = data.get("kind")
    if kind not in MODEL_KINDS:
        raise FeatureError(f"unknown model kind {kind!r}")
    if data.get("version") != MODEL_VERSION:
        raise FeatureError(f"unsupported model version {data.get('version')!r}")
    return MODEL_KINDS[kind].from_dict(data)


def load_model(path: Union[str, Path]) -> AdoptionModel:
    with open(path, "r", encoding="utf-8") as handle:
        return model_from_dict(json.load(handle))


# =============================================================================
# EVALUATION
# =============================================================================

@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    macro_f1: float
    tn_rate: float
    precision: List[float]
    recall: List[float]
    f1: List[float]
    support: List[int]

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "n": self.n, "classes": ["no_adoption", "adoption"]}


def evaluate_predictions(y_true: np.ndarray, y_pred: np.ndarray) -> EvalReport:
    """Confusion counts, macro-F1 over both classes and TN / (TN + FP)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    (tn, fp), (fn, tp) = confusion_matrix(y_true, y_pred, labels=[0, 1])
    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=[0, 1], zero_division=0)
    negatives = tn + fp
    return EvalReport(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn),
                      macro_f1=float(np.mean(f1)),
                      tn_rate=float(tn / negatives) if negatives else 0.0,
                      precision=[float(v) for v in precision], recall=[float(v) for v in recall],
                      f1=[float(v) for v in f1], support=[int(v) for v in support])


def evaluate(model: AdoptionModel, test: FeatureMatrix) -> EvalReport:
    """Evaluate a model at threshold 0.5 on a labeled matrix."""
    if len(test) == 0:
        raise EmptySplitError("cannot evaluate on an empty test set")
    return evaluate_predictions(test.y, model.predict(test))


# =============================================================================
# PARTITION TRAINING
# =============================================================================

@dataclass
class PartitionOutcome:
    """Everything trained and measured for one state (or the pooled data)."""
    name: str
    class_counts: Dict[str, int]
    models: Dict[str, AdoptionModel] = field(default_factory=dict)
    reports: Dict[str, EvalReport] = field(default_factory=dict)
    test: Optional[FeatureMatrix] = None
    train: Optional[FeatureMatrix] = None


def class_counts(matrix: FeatureMatrix) -> Dict[str, int]:
    labels = matrix.y
    return {"no_adoption": int((labels == 0).sum()), "adoption": int((labels == 1).sum())}


def train_partition(name: str, matrix: FeatureMatrix, split: SplitSpec, params: TrainParams,
                    seed: int, n_jobs: int = 1) -> PartitionOutcome:
    """Split, downsample and fit all three classifiers on one partition."""
    train, test = temporal_split(matrix, split)
    counts = {f"train_{k}": v for k, v in class_counts(train).items()}
    counts.update({f"test_{k}": v for k, v in class_counts(test).items()})
    if split.downsample:
        train = downsample_majority(train, split.seed)
    counts.update({f"balanced_{k}": v for k, v in class_counts(train).items()})
    logger.info(f"[{name}] train {len(train)} rows, test {len(test)} rows")

    X, y, names = train.X, train.y, train.feature_names
    outcome = PartitionOutcome(name=name, class_counts=counts, test=test, train=train)
    outcome.models["logistic"] = train_logistic(X, y, names, params.logistic_l2,
                                                params.logistic_tol, params.logistic_max_iter)
    outcome.models["random_forest"] = train_random_forest(X, y, names, params.trees, params.max_depth,
                                                          seed, n_jobs)
    outcome.models["gbt"] = train_gbt(X, y, names, params.gbt_stages, params.gbt_learning_rate,
                                      params.gbt_max_depth, seed)
    for kind, model in outcome.models.items():
        outcome.reports[kind] = evaluate(model, test)
        logger.info(f"[{name}] {kind}: macro-F1 {outcome.reports[kind].macro_f1:.3f}, "
                    f"TN rate {outcome.reports[kind].tn_rate:.3f}")
    return outcome
