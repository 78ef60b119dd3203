import json

import numpy as np
import pytest

from smartreflex.errors import SchemaVersionError
from smartreflex.features import FeatureSchema, FeatureVector, fit_scaler
from smartreflex.learn.artifact import ModelArtifact, predict_proba
from smartreflex.learn.forest import ForestParams
from smartreflex.learn.logistic import train_logistic
from smartreflex.learn.tuning import (
    LogisticConfig, config_from_dict, default_grid, describe, tie_break_key, tune,
)

SCHEMA = FeatureSchema(("NA",))


def _rows(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, len(SCHEMA)))
    X[:, 1] = rng.random(n) < 0.5
    X[:, 2:11][rng.random((n, 9)) < 0.1] = np.nan
    X[:, 0] = rng.uniform(20, 90, n)
    c = SCHEMA.history_columns("NA")
    count = rng.integers(0, 3, n)
    X[:, c["count"]] = count
    X[:, c["sum"]] = X[:, c["mean"]] * count
    empty = np.nonzero(count == 0)[0]
    X[np.ix_(empty, [c["mean"], c["min"], c["max"], c["sum"]])] = np.nan
    y = rng.random(n) < 1 / (1 + np.exp(-(np.nan_to_num(X[:, 4]) * 2 - 1)))
    return X, y


def test_default_grid():
    g = default_grid()
    assert sum(isinstance(c, LogisticConfig) for c in g) == 4
    assert sum(isinstance(c, ForestParams) for c in g) == 18


def test_config_round_trip():
    for c in default_grid():
        assert config_from_dict(describe(c)) == c


def test_tie_break_prefers_logistic_then_lower_capacity():
    lr_strong, lr_weak = LogisticConfig(1e-1), LogisticConfig(1e-4)
    shallow, deep = ForestParams(max_depth=8), ForestParams(max_depth=None)
    keys = sorted([(tie_break_key(deep, 0), "deep"), (tie_break_key(shallow, 1), "shallow"),
                   (tie_break_key(lr_weak, 2), "weak"), (tie_break_key(lr_strong, 3), "strong")])
    assert [k[1] for k in keys] == ["strong", "weak", "shallow", "deep"]


def test_tune_selects_best_and_keeps_one_per_kind():
    X, y = _rows(600)
    Xt, yt = _rows(300, seed=1)
    grid = [LogisticConfig(1e-4), LogisticConfig(10.0), ForestParams(n_trees=5, max_depth=3),
            ForestParams(n_trees=10, max_depth=3)]
    res = tune(grid, X, y, Xt, yt, SCHEMA, seed=0, run=0)
    assert set(res.best_by_kind) == {"logistic", "forest"}
    scores = [row["score"] for row in res.table]
    best = max(scores)
    assert res.artifact.metadata["tuning_value"] == best
    assert sum(row["selected"] for row in res.table) == 1
    assert res.table[res.artifact.metadata["grid_index"]]["selected"]


def test_identical_configs_tie_to_first():
    X, y = _rows(300)
    res = tune([LogisticConfig(1e-3), LogisticConfig(1e-3)], X, y, X, y, SCHEMA)
    assert res.artifact.metadata["grid_index"] == 0


def test_scaler_fit_on_training_rows_only():
    X, y = _rows(300)
    Xt, yt = _rows(300, seed=7)
    Xt[:, 0] += 1000
    res = tune([LogisticConfig()], X, y, Xt, yt, SCHEMA)
    expected = fit_scaler(X, SCHEMA)
    np.testing.assert_array_equal(res.artifact.scaler.mean, expected.mean)


def _artifact():
    X, y = _rows()
    sc = fit_scaler(X, SCHEMA)
    return ModelArtifact("logistic", train_logistic(sc.transform(X), y), sc, SCHEMA, {"run": 0}), X


def test_artifact_round_trip(tmp_path):
    art, X = _artifact()
    art.save(tmp_path / "m.json")
    back = ModelArtifact.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.predict_proba(X), art.predict_proba(X))
    assert back.dumps() == art.dumps()


def test_single_row_prediction():
    art, X = _artifact()
    p = predict_proba(art, X[3])
    assert isinstance(p, float) and p == art.predict_proba(X)[3]
    assert predict_proba(art, FeatureVector(SCHEMA.version, X[3])) == p
    with pytest.raises(SchemaVersionError):
        predict_proba(art, FeatureVector("other", X[3]))
    with pytest.raises(SchemaVersionError):
        predict_proba(art, X[3][:5])


def test_bad_artifact_format():
    art, _ = _artifact()
    d = json.loads(art.dumps())
    with pytest.raises(SchemaVersionError):
        ModelArtifact.from_dict({**d, "format": "other/9"})
    with pytest.raises(SchemaVersionError):
        ModelArtifact.from_dict({**d, "kind": "svm"})
