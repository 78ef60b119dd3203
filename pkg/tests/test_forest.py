import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartreflex.errors import DegenerateLabels
from smartreflex.evaluate.metrics import roc_auc
from smartreflex.learn.forest import ForestModel, ForestParams, feature_importance, train_forest


def _data(n=600, d=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(0, 0.5, n)) > 0.3
    return X, y


def test_learns_signal_and_ranks_it_first():
    X, y = _data(1500)
    f = train_forest(X, y, ForestParams(n_trees=40, max_depth=8, min_samples_leaf=5), seed=1)
    Xt, yt = _data(800, seed=9)
    assert roc_auc(f.predict_proba(Xt), yt) > 0.85
    ranked = [name for name, _, _ in feature_importance(f, [f"x{i}" for i in range(6)])]
    assert ranked[:2] == ["x0", "x1"]


def test_importance_is_normalised_per_tree():
    X, y = _data()
    f = train_forest(X, y, ForestParams(n_trees=5), seed=0)
    imp = f.tree_importances()
    np.testing.assert_allclose(imp.sum(axis=1), 1.0)
    assert np.all(imp >= 0)


def test_permuted_labels_carry_no_signal():
    X, y = _data(1000)
    rng = np.random.default_rng(4)
    f = train_forest(X, rng.permutation(y), ForestParams(n_trees=30, min_samples_leaf=20), seed=0)
    Xt, yt = _data(2000, seed=11)
    assert abs(roc_auc(f.predict_proba(Xt), yt) - 0.5) < 0.06


def test_memorises_without_bootstrap_or_limits():
    X, y = _data(200)
    f = train_forest(X, y, ForestParams(n_trees=1, bootstrap=False, features_per_split="all"), seed=0)
    np.testing.assert_array_equal(f.predict_proba(X), y.astype(float))


def test_duplicated_feature_splits_importance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=2000)
    X = np.column_stack([x, x, rng.normal(size=2000)])
    y = x + rng.normal(0, 0.3, 2000) > 0
    f = train_forest(X, y, ForestParams(n_trees=60, max_depth=4, features_per_split="all"), seed=0)
    mean = f.tree_importances().mean(axis=0)
    assert mean[0] + mean[1] > 0.9 and mean[2] < 0.1


def test_depth_and_leaf_limits():
    X, y = _data()
    f = train_forest(X, y, ForestParams(n_trees=3, max_depth=2, min_samples_leaf=50, bootstrap=False), seed=0)
    for t in f.trees:
        assert t.n_nodes <= 7
        leaves = t.feature < 0
        assert np.all((t.value[leaves] >= 0) & (t.value[leaves] <= 1))


def test_prefix_property_and_determinism():
    X, y = _data()
    p = ForestParams(n_trees=12, max_depth=6)
    big = train_forest(X, y, p, seed=3, stream=(2,))
    small = train_forest(X, y, ForestParams(n_trees=5, max_depth=6), seed=3, stream=(2,))
    np.testing.assert_array_equal(big.head(5).predict_proba(X), small.predict_proba(X))
    threaded = train_forest(X, y, p, seed=3, stream=(2,), threads=4)
    assert threaded.to_dict() == big.to_dict()
    other = train_forest(X, y, p, seed=4, stream=(2,))
    assert other.to_dict() != big.to_dict()


def test_serialisation_round_trip():
    X, y = _data()
    f = train_forest(X, y, ForestParams(n_trees=4), seed=0)
    back = ForestModel.from_dict(f.to_dict())
    np.testing.assert_array_equal(back.predict_proba(X), f.predict_proba(X))


def test_degenerate_labels():
    X, _ = _data(50)
    with pytest.raises(DegenerateLabels):
        train_forest(X, np.zeros(50, bool))


def test_wrong_width_rejected():
    X, y = _data(100)
    f = train_forest(X, y, ForestParams(n_trees=2), seed=0)
    with pytest.raises(ValueError):
        f.predict_proba(X[:, :3])


@pytest.mark.parametrize("spec,expected", [("sqrt", 3), ("all", 10), (4, 4), (50, 10)])
def test_mtry(spec, expected):
    assert ForestParams(features_per_split=spec).mtry(10) == expected


@settings(max_examples=20, deadline=None)
@given(st.integers(20, 120), st.integers(0, 10_000))
def test_probabilities_are_valid(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    X[:, 2] = np.round(X[:, 2])                       # heavy ties
    y = rng.random(n) < 0.4
    y[0], y[1] = True, False
    f = train_forest(X, y, ForestParams(n_trees=3), seed=seed)
    p = f.predict_proba(rng.normal(size=(30, 3)) * 10)
    assert np.all((p >= 0) & (p <= 1))
