import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import cart_oracle, gini_pairwise

from aec.errors import DegenerateError, RangeError, ShapeError, ValidationError
from aec.forest import (ForestModel, ForestParams, Internal, Leaf, best_split, cross_validate, feature_importances,
                        gini_impurity, grow_tree, predict_error_prob, predict_error_probs, stratified_folds,
                        train_forest)

FULL = ForestParams(n_trees=1, bootstrap=False, features_per_split=None)


def as_tuple(node):
    if isinstance(node, Leaf):
        return ("leaf", *node.counts)
    return ("split", node.feature, node.threshold, as_tuple(node.left), as_tuple(node.right))


def single_tree(X, y):
    X = np.asarray(X, dtype=float)
    params = ForestParams(n_trees=1, bootstrap=False, features_per_split=X.shape[1])
    return grow_tree(X, np.asarray(y), params, np.random.default_rng(0))


def test_gini_examples():
    assert gini_impurity(10, 0) == 0
    assert gini_impurity(5, 5) == 0.5
    assert gini_impurity(3, 1) == 0.375
    with pytest.raises(ValidationError):
        gini_impurity(0, 0)


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_gini_matches_pairwise(n0, n1):
    if n0 + n1 == 0:
        return
    assert abs(gini_impurity(n0, n1) - float(gini_pairwise(n0, n1))) <= 1e-12


def test_best_split_examples():
    X = np.array([[0.0, 3.0], [1.0, 3.0], [2.0, 3.0], [3.0, 3.0]])
    y = np.array([0, 0, 1, 1])
    s = best_split(X, y, [0, 1])
    assert (s.feature, s.threshold) == (0, 1.5)
    assert s.gain == pytest.approx(gini_impurity(2, 2))
    assert best_split(np.ones((4, 2)), y, [0, 1]) is None


def _brute_best(X, y):
    """(gain, feature, threshold) over every feature and midpoint, exact arithmetic."""
    n = len(y)
    parent = 1 - Fraction(int(sum(y)), n) ** 2 - Fraction(n - int(sum(y)), n) ** 2
    best = None
    for f in range(X.shape[1]):
        vals = sorted(set(X[:, f].tolist()))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left = [int(y[i]) for i in range(n) if X[i, f] <= thr]
            right = [int(y[i]) for i in range(n) if X[i, f] > thr]

            def imp(part):
                p = Fraction(sum(part), len(part))
                return 1 - p * p - (1 - p) * (1 - p)

            gain = parent - Fraction(len(left), n) * imp(left) - Fraction(len(right), n) * imp(right)
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, f, thr)
    return best


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 1)), min_size=4, max_size=4))
def test_best_split_matches_enumeration(rows):
    X = np.array([[a, b] for a, b, _ in rows], dtype=float)
    y = np.array([c for _, _, c in rows])
    got = best_split(X, y, [0, 1])
    want = _brute_best(X, y)
    if want is None:
        assert got is None
    else:
        assert (got.feature, got.threshold) == (want[1], want[2])
        assert got.gain == pytest.approx(float(want[0]), abs=1e-12)


def test_stopping_rules():
    X = np.array([[0.0], [1.0], [2.0]])
    assert grow_tree(X, np.array([1, 1, 1]), FULL, np.random.default_rng(0)) == Leaf((0, 3))
    shallow = ForestParams(n_trees=1, max_depth=0, bootstrap=False)
    assert grow_tree(X, np.array([0, 1, 1]), shallow, np.random.default_rng(0)) == Leaf((1, 2))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)),
                min_size=8, max_size=8))
def test_eight_row_tree_matches_oracle(rows):
    X = [r[:3] for r in rows]
    y = [r[3] for r in rows]
    assert as_tuple(single_tree(X, y)) == cart_oracle(X, y)


def test_single_tree_forest_reduces_to_grow_tree():
    rng = np.random.default_rng(5)
    X = rng.integers(0, 3, size=(30, 4)).astype(float)
    y = (X[:, 1] + rng.integers(0, 2, 30) > 2).astype(int)
    model = train_forest(X, y, ForestParams(n_trees=1, bootstrap=False, features_per_split=4))
    assert model.trees[0] == single_tree(X, y)


def _planted(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 6))
    X[:, 3] = rng.integers(0, 2, n)
    y = X[:, 3].astype(int)
    return X, y


def test_forest_deterministic_and_worker_independent():
    X, y = _planted()
    p = ForestParams(n_trees=8, seed=3)
    a, b = train_forest(X, y, p), train_forest(X, y, p, workers=2)
    assert a.trees == b.trees
    assert a.importances == b.importances


def test_planted_feature_dominates_importance():
    X, y = _planted()
    imp = train_forest(X, y, ForestParams(n_trees=20)).importances
    assert max(imp, key=imp.get) == "x00003"
    assert sum(imp.values()) == pytest.approx(1.0, abs=1e-9)


def test_single_class_rejected():
    with pytest.raises(DegenerateError):
        train_forest(np.zeros((3, 1)), [1, 1, 1])


def test_prediction_examples():
    space_model = train_forest(np.array([[0.0], [1.0]]), [0, 1], ForestParams(n_trees=1, bootstrap=False))
    pure_error = ForestModel([Leaf((0, 3))], space_model.space, space_model.params, {"x00000": 0.0})
    assert predict_error_prob(pure_error, [0.7]) == 1.0
    two = ForestModel([Leaf((0, 2)), Leaf((1, 1))], space_model.space, space_model.params, {"x00000": 0.0})
    assert predict_error_prob(two, [0.0]) == 0.75
    with pytest.raises(ShapeError):
        predict_error_probs(two, np.zeros((1, 2)))


def test_prediction_hand_trace():
    tree_a = Internal(0, 0.5, Leaf((3, 1)), Internal(1, 2.0, Leaf((0, 2)), Leaf((1, 1))))
    tree_b = Internal(1, 1.0, Leaf((1, 0)), Leaf((1, 3)))
    base = train_forest(np.array([[0.0, 0.0], [1.0, 1.0]]), [0, 1], ForestParams(n_trees=1, bootstrap=False))
    model = ForestModel([tree_a, tree_b], base.space, base.params, base.importances)
    rows = np.array([[0.0, 0.0], [1.0, 1.5], [1.0, 3.0], [0.5, 1.0]])
    # hand traversal: row -> (tree_a leaf fraction, tree_b leaf fraction)
    expected = [(0.25 + 0.0) / 2, (1.0 + 0.75) / 2, (0.5 + 0.75) / 2, (0.25 + 0.0) / 2]
    assert predict_error_probs(model, rows).tolist() == expected


def test_importance_examples():
    base = train_forest(np.array([[0.0, 0.0], [1.0, 1.0]]), [0, 1], ForestParams(n_trees=1, bootstrap=False))
    assert feature_importances(base) == {"x00000": 1.0, "x00001": 0.0}
    X = np.array([[0.0, 5.0], [0.0, 5.0], [0.0, 5.0]])
    stump_only = train_forest(np.vstack([X, X]), [0, 1, 0, 1, 0, 1], ForestParams(n_trees=3))
    assert all(v == 0.0 for v in stump_only.importances.values())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5))
def test_importance_invariants(seed, d):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, size=(25, d)).astype(float)
    X[:, -1] = 0.0  # constant column is never split on
    y = rng.integers(0, 2, 25)
    if y.min() == y.max():
        return
    model = train_forest(X, y, ForestParams(n_trees=5, seed=seed))
    used = set()
    for t in model.trees:
        stack = [t]
        while stack:
            node = stack.pop()
            if isinstance(node, Internal):
                used.add(node.feature)
                stack += [node.left, node.right]
    imp = [model.importances[n] for n in model.space.names]
    if used:
        assert sum(imp) == pytest.approx(1.0, abs=1e-9)
    for j, v in enumerate(imp):
        if j not in used:
            assert v == 0.0


def test_model_round_trip(tmp_path):
    X, y = _planted(60)
    m = train_forest(X, y, ForestParams(n_trees=4))
    m.save(tmp_path / "f.json")
    back = ForestModel.load(tmp_path / "f.json")
    assert back.trees == m.trees
    assert np.array_equal(predict_error_probs(back, X), predict_error_probs(m, X))


def test_stratified_folds_partition():
    y = np.array([0] * 7 + [1] * 5)
    folds = stratified_folds(y, 3, seed=1)
    assert sorted(itertools.chain.from_iterable(f.tolist() for f in folds)) == list(range(12))
    assert all(abs(len(a) - len(b)) <= 1 for a in folds for b in folds)


def test_cv_examples():
    X = np.array([[0.0], [1.0], [0.0], [1.0], [0.0], [1.0]])
    y = np.array([0, 1, 0, 1, 0, 1])
    one = (ForestParams(n_trees=3),)
    rep = cross_validate(X, y, k=6, grid=one)
    assert len(rep.fold_metrics) == 6
    assert rep.chosen_params == one[0]
    assert rep.mean["accuracy"] == 1.0
    with pytest.raises(RangeError):
        cross_validate(X, y, k=7, grid=one)
    with pytest.raises(RangeError):
        cross_validate(X, y, k=1, grid=one)
