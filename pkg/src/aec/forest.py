"""CART trees and random forests for the binary error-identification task.

Label 1 marks an instance the base classifier got wrong, label 0 one it got
right. Leaves keep raw class counts ``(n_correct, n_error)`` and the forest
scores a row by averaging the error fraction of the leaves it reaches.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numba import njit

from .errors import DegenerateError, RangeError, ShapeError, ValidationError
from .features import FeatureMatrix, FeatureSpace

# gains closer than this are treated as ties; distinct gains on integer counts
# differ by far more for any node size this package will see
GAIN_EPS = 1e-12


def gini_impurity(n0: int, n1: int) -> float:
    total = n0 + n1
    if total < 1:
        raise ValidationError("gini impurity of an empty node is undefined")
    p0, p1 = n0 / total, n1 / total
    return 1.0 - p0 * p0 - p1 * p1


@dataclass(frozen=True)
class Leaf:
    counts: tuple[int, int]

    @property
    def error_fraction(self) -> float:
        return self.counts[1] / (self.counts[0] + self.counts[1])


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"
    counts: tuple[int, int] = field(default=(0, 0), compare=False)
    gain: float = field(default=0.0, compare=False)


TreeNode = Union[Leaf, Internal]


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float


@njit(cache=True)
def _split_kernel(X, rows, y, feats, min_samples_leaf):
    """Scan candidate features in the given order; return (position in feats, threshold, gain).

    Position is -1 when no split has positive gain. A later candidate replaces
    the incumbent only when its gain is larger by more than GAIN_EPS, so ties
    keep the earliest feature and, within it, the lowest threshold.
    """
    n = rows.shape[0]
    n1 = 0
    for i in range(n):
        n1 += y[rows[i]]
    n0 = n - n1
    parent = 1.0 - (n0 / n) ** 2 - (n1 / n) ** 2
    best_pos, best_thr, best_gain = -1, 0.0, GAIN_EPS
    vals = np.empty(n)
    labs = np.empty(n, dtype=np.int64)
    for j in range(feats.shape[0]):
        f = feats[j]
        for i in range(n):
            vals[i] = X[rows[i], f]
        order = np.argsort(vals)
        for i in range(n):
            labs[i] = y[rows[order[i]]]
        left1 = 0
        for i in range(n - 1):
            left1 += labs[i]
            lo = vals[order[i]]
            hi = vals[order[i + 1]]
            if not lo < hi:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_samples_leaf or nr < min_samples_leaf:
                continue
            left0 = nl - left1
            right1 = n1 - left1
            right0 = nr - right1
            score = (left0 * left0 + left1 * left1) / nl + (right0 * right0 + right1 * right1) / nr
            gain = parent - (1.0 - score / n)
            if gain > best_gain + (GAIN_EPS if best_pos >= 0 else 0.0):
                thr = (lo + hi) / 2.0
                if thr >= hi:
                    thr = lo
                best_pos, best_thr, best_gain = j, thr, gain
    return best_pos, best_thr, best_gain


def _split_rows(X, rows, y, feats, min_samples_leaf) -> Split | None:
    pos, thr, gain = _split_kernel(X, rows, y, feats, min_samples_leaf)
    if pos < 0:
        return None
    return Split(int(feats[pos]), float(thr), float(gain))


def best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int], min_samples_leaf: int = 1) -> Split | None:
    """Best Gini split over the candidate features, or None without positive gain.

    Thresholds are midpoints between consecutive distinct values; rows with
    ``value <= threshold`` go left. Ties go to the lowest feature index, then
    the lowest threshold.
    """
    feats = np.array(sorted(features), dtype=np.int64)
    if len(y) < 2 or len(feats) == 0:
        return None
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    return _split_rows(X, np.arange(len(y), dtype=np.int64), y, feats, min_samples_leaf)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None means ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    def resolve(self, d: int) -> "ForestParams":
        m = self.features_per_split if self.features_per_split is not None else math.ceil(math.sqrt(d))
        if not 1 <= m <= d:
            raise ValidationError(f"features_per_split={m} must lie in 1..{d}")
        return replace(self, features_per_split=m)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestParams":
        return cls(**d)


def grow_tree(X: np.ndarray, y: np.ndarray, params: ForestParams, rng: np.random.Generator,
              rows: np.ndarray | None = None) -> TreeNode:
    """Recursive CART on ``X[rows]``; features are redrawn at every node."""
    d = X.shape[1]
    m = params.resolve(d).features_per_split if d else 0
    msl = params.min_samples_leaf
    all_feats = np.arange(d, dtype=np.int64)
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        labels = y[idx]
        n1 = int(labels.sum())
        counts = (len(idx) - n1, n1)
        if (n1 == 0 or n1 == len(idx) or len(idx) < 2 * msl or len(idx) < 2
                or (params.max_depth is not None and depth >= params.max_depth) or m == 0):
            return Leaf(counts)
        feats = all_feats if m == d else np.sort(rng.choice(d, size=m, replace=False))
        split = _split_rows(X, idx, y, feats, msl)
        if split is None:
            return Leaf(counts)
        go_left = X[idx, split.feature] <= split.threshold
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        return Internal(split.feature, split.threshold, left, right, counts, split.gain)

    if rows is None:
        rows = np.arange(len(y))
    if len(rows) < 1:
        raise DegenerateError("cannot grow a tree on zero rows")
    return grow(np.asarray(rows, dtype=np.int64), 0)


def tree_importances(tree: TreeNode, d: int) -> np.ndarray:
    """Impurity decrease per feature, each split weighted by its share of the tree's samples."""
    imp = np.zeros(d)
    root_n = sum(tree.counts)
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Internal):
            imp[node.feature] += sum(node.counts) / root_n * node.gain
            stack.extend((node.right, node.left))
    return imp


class _FlatTree:
    """Array form of a tree for vectorized traversal."""

    def __init__(self, tree: TreeNode):
        feature, threshold, left, right, value = [], [], [], [], []
        stack = [(tree, -1, False)]
        while stack:
            node, parent, is_right = stack.pop()
            i = len(feature)
            if parent >= 0:
                (right if is_right else left)[parent] = i
            if isinstance(node, Leaf):
                feature.append(-1)
                threshold.append(0.0)
                value.append(node.error_fraction)
            else:
                feature.append(node.feature)
                threshold.append(node.threshold)
                value.append(0.0)
                stack.append((node.right, i, True))
                stack.append((node.left, i, False))
            left.append(-1)
            right.append(-1)
        self.feature = np.array(feature)
        self.threshold = np.array(threshold)
        self.left = np.array(left)
        self.right = np.array(right)
        self.value = np.array(value)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class ForestModel:
    trees: list[TreeNode]
    space: FeatureSpace
    params: ForestParams
    importances: dict[str, float]
    _flat: list[_FlatTree] | None = field(default=None, repr=False, compare=False)

    def flat_trees(self) -> list[_FlatTree]:
        if self._flat is None:
            self._flat = [_FlatTree(t) for t in self.trees]
        return self._flat

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "features": list(self.space.names),
            "importances": self.importances,
            "trees": [_node_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        space = FeatureSpace(tuple(d["features"]))
        return cls([_node_from_dict(t) for t in d["trees"]], space,
                   ForestParams.from_dict(d["params"]), {k: float(v) for k, v in d["importances"].items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"counts": list(node.counts)}
    return {
        "feature": node.feature, "threshold": node.threshold, "counts": list(node.counts),
        "gain": node.gain, "left": _node_to_dict(node.left), "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "feature" not in d:
        return Leaf(tuple(d["counts"]))
    return Internal(int(d["feature"]), float(d["threshold"]), _node_from_dict(d["left"]),
                    _node_from_dict(d["right"]), tuple(d["counts"]), float(d["gain"]))


def _as_arrays(matrix, labels) -> tuple[np.ndarray, np.ndarray, FeatureSpace]:
    if isinstance(matrix, FeatureMatrix):
        X, space = matrix.rows, matrix.space
    else:
        X = np.asarray(matrix, dtype=float)
        if X.ndim != 2:
            raise ShapeError("feature matrix must be two-dimensional")
        space = FeatureSpace(tuple(f"x{i:05d}" for i in range(X.shape[1])))
    y = np.asarray(labels, dtype=int)
    if y.shape != (X.shape[0],):
        raise ShapeError(f"{len(y)} labels for {X.shape[0]} rows")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 (correct) or 1 (error)")
    return X, y, space


def _grow_member(args) -> TreeNode:
    X, y, params, t = args
    rng = np.random.default_rng([params.seed, t])
    n = len(y)
    rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
    return grow_tree(X, y, params, rng, rows)


def train_forest(matrix: FeatureMatrix | np.ndarray, labels: Sequence[int], params: ForestParams | None = None,
                 workers: int = 1) -> ForestModel:
    """Grow ``params.n_trees`` trees, each from its own ``(seed, tree index)`` stream.

    The result does not depend on ``workers``.
    """
    X, y, space = _as_arrays(matrix, labels)
    params = (params or ForestParams()).resolve(X.shape[1])
    if len(y) < 2:
        raise DegenerateError("need at least two rows to train a forest")
    if y.min() == y.max():
        raise DegenerateError("error-classifier labels contain a single class")
    jobs = [(X, y, params, t) for t in range(params.n_trees)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(_grow_member, jobs))
    else:
        trees = [_grow_member(job) for job in jobs]
    d = X.shape[1]
    total = np.zeros(d)
    for tree in trees:
        total += tree_importances(tree, d)
    total /= len(trees)
    s = total.sum()
    if s > 0:
        total = total / s
    importances = {name: float(v) for name, v in zip(space.names, total)}
    return ForestModel(trees, space, params, importances)


def predict_error_probs(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.space):
        raise ShapeError(f"rows must have {len(model.space)} columns, got shape {X.shape}")
    total = np.zeros(len(X))
    for flat in model.flat_trees():
        total += flat.predict(X)
    return total / len(model.trees)


def predict_error_prob(model: ForestModel, row: Sequence[float]) -> float:
    row = np.asarray(row, dtype=float)
    if row.ndim != 1:
        raise ShapeError("expected a single row")
    return float(predict_error_probs(model, row[None, :])[0])


def feature_importances(model: ForestModel) -> dict[str, float]:
    return dict(model.importances)


def ranked_importances(model: ForestModel, top: int | None = None) -> list[tuple[str, float]]:
    items = sorted(model.importances.items(), key=lambda kv: (-kv[1], kv[0]))
    items = [kv for kv in items if kv[1] > 0]
    return items[:top] if top is not None else items


DEFAULT_GRID = (
    ForestParams(n_trees=100, max_depth=None, min_samples_leaf=1),
    ForestParams(n_trees=100, max_depth=None, min_samples_leaf=5),
    ForestParams(n_trees=100, max_depth=16, min_samples_leaf=1),
    ForestParams(n_trees=100, max_depth=16, min_samples_leaf=5),
)


@dataclass
class CVReport:
    k: int
    fold_metrics: list[dict[str, float]]
    mean: dict[str, float]
    std: dict[str, float]
    chosen_params: ForestParams
    grid_accuracy: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "fold_metrics": self.fold_metrics,
            "mean": self.mean,
            "std": self.std,
            "chosen_params": asdict(self.chosen_params),
            "grid_accuracy": self.grid_accuracy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CVReport":
        return cls(d["k"], d["fold_metrics"], d["mean"], d["std"],
                   ForestParams.from_dict(d["chosen_params"]), d.get("grid_accuracy", []))


def stratified_folds(y: np.ndarray, k: int, seed: int = 0) -> list[np.ndarray]:
    """Deal each class round-robin over the folds after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            folds[(offset + j) % k].append(int(i))
        offset = (offset + len(idx)) % k
    return [np.array(sorted(f), dtype=int) for f in folds]


def binary_metrics(truth: np.ndarray, predicted: np.ndarray) -> dict[str, float]:
    """Accuracy, precision and recall for the error class; undefined ratios are 0."""
    tp = int(((predicted == 1) & (truth == 1)).sum())
    fp = int(((predicted == 1) & (truth == 0)).sum())
    fn = int(((predicted == 0) & (truth == 1)).sum())
    return {
        "accuracy": float((predicted == truth).mean()),
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
    }


def _fold_scores(X, y, train_idx, test_idx, params) -> np.ndarray:
    y_train = y[train_idx]
    if y_train.min() == y_train.max():
        return np.full(len(test_idx), float(y_train[0]))
    model = train_forest(X[train_idx], y_train, params)
    return predict_error_probs(model, X[test_idx])


def cross_validate(matrix: FeatureMatrix | np.ndarray, labels: Sequence[int], k: int = 5,
                   grid: Sequence[ForestParams] = DEFAULT_GRID, seed: int = 0) -> CVReport:
    """Pick the grid entry with the best mean fold accuracy (earliest wins ties).

    A row is called an error when its forest score is at least 0.5.
    """
    X, y, _ = _as_arrays(matrix, labels)
    n = len(y)
    if k < 2:
        raise RangeError("k must be >= 2")
    if k > n:
        raise RangeError(f"k={k} exceeds the number of rows ({n})")
    if y.min() == y.max():
        raise DegenerateError("cross-validation needs both classes")
    if not grid:
        raise ValidationError("parameter grid is empty")
    folds = stratified_folds(y, k, seed)
    all_idx = np.arange(n)
    best = None
    grid_acc = []
    for params in grid:
        metrics = []
        for test_idx in folds:
            train_idx = np.setdiff1d(all_idx, test_idx, assume_unique=True)
            scores = _fold_scores(X, y, train_idx, test_idx, params)
            metrics.append(binary_metrics(y[test_idx], (scores >= 0.5).astype(int)))
        acc = float(np.mean([m["accuracy"] for m in metrics]))
        grid_acc.append(acc)
        if best is None or acc > best[0]:
            best = (acc, params, metrics)
    _, params, metrics = best
    names = ("accuracy", "precision", "recall")
    mean = {m: float(np.mean([f[m] for f in metrics])) for m in names}
    std = {m: float(np.std([f[m] for f in metrics])) for m in names}
    return CVReport(k, metrics, mean, std, params, grid_acc)
