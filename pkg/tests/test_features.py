import math
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartreflex.catalog import CBC_CODES
from smartreflex.cohort import build_cohort
from smartreflex.errors import InsufficientData, SchemaVersionError
from smartreflex.features import (
    AnchorMode, FeatureSchema, HistoryWindow, assemble_features, feature_matrix, fit_scaler,
    historical_aggregates, load_features, resolve_window, save_features,
)

UTC = timezone.utc
WINDOW = (date(2019, 1, 1), date(2019, 12, 31))


def test_aggregates_example():
    t0 = datetime(2019, 1, 1, tzinfo=UTC)
    times = [t0, t0 + timedelta(days=1), t0 + timedelta(days=2), t0 + timedelta(days=3)]
    agg = historical_aggregates([1.0, 2.0, 4.0, 100.0], times, t0, t0 + timedelta(days=2))
    assert (agg.count, agg.min, agg.max, agg.sum) == (3, 1.0, 4.0, 7.0)
    assert agg.mean == pytest.approx(7 / 3)
    assert agg.std == pytest.approx(np.std([1, 2, 4], ddof=1))


def test_aggregates_single_and_empty():
    t0 = datetime(2019, 1, 1, tzinfo=UTC)
    one = historical_aggregates([5.0], [t0], t0, t0)
    assert one.count == 1 and one.std == 0.0 and one.mean == 5.0
    none = historical_aggregates([5.0], [t0], t0 + timedelta(seconds=1), t0 + timedelta(days=1))
    assert none.count == 0 and none.to_impute and math.isnan(none.mean)


def test_history_window_validation():
    with pytest.raises(ValueError):
        HistoryWindow(gap=timedelta(0))
    with pytest.raises(ValueError):
        HistoryWindow(lookback=timedelta(days=10), gap=timedelta(days=30))


def test_schema_layout():
    s = FeatureSchema(("NA", "FERRITIN"))
    assert s.history_analytes == ("FERRITIN", "NA")          # catalog order
    assert s.names[:2] == ("age", "gender_male")
    assert s.names[2:11] == CBC_CODES
    assert s.names[11:17] == tuple(f"FERRITIN_prior_{x}" for x in ("mean", "std", "count", "min", "max", "sum"))
    assert len(s) == 2 + 9 + 12
    assert len(FeatureSchema(("NA",), include_std=False)) == 2 + 9 + 5
    assert s.version != FeatureSchema(("NA",)).version
    assert FeatureSchema.from_dict(s.to_dict()) == s
    with pytest.raises(SchemaVersionError):
        FeatureSchema.from_dict({**s.to_dict(), "version": "bogus"})
    with pytest.raises(KeyError):
        FeatureSchema(("NOPE",))


def test_gap_excludes_recent_results(tiny_dataset):
    cohort = build_cohort(tiny_dataset, WINDOW)
    schema = FeatureSchema.for_dataset(tiny_dataset)
    X = feature_matrix(cohort, tiny_dataset, schema)
    row = X[0]                                   # p1's event
    c = schema.history_columns("NA")
    assert row[c["count"]] == 2                  # the day -10 sodium is inside the gap
    assert row[c["mean"]] == 140.0
    f = schema.history_columns("FERRITIN")
    assert row[f["count"]] == 1 and row[f["max"]] == 20.0   # the day +5 ferritin is never read
    assert row[schema.index("HCT")] == 33.0 and row[schema.index("gender_male")] == 0.0


def test_per_patient_anchor_extends_lookback(tiny_dataset):
    cohort = build_cohort(tiny_dataset, WINDOW)
    later = cohort.events[3]
    s1, e1 = resolve_window(later, cohort, AnchorMode.PER_EVENT)
    s2, e2 = resolve_window(later, cohort, AnchorMode.PER_PATIENT_FIRST_CBC)
    assert e1 == e2 == later.t - timedelta(days=30)
    assert s1 == later.t - timedelta(days=730)
    assert s2 == cohort.events[1].t - timedelta(days=730)


@pytest.mark.parametrize("anchor", ["per_event", "per_patient_first_cbc"])
def test_matrix_matches_per_event_assembly(small_synth, anchor):
    from smartreflex.ingest import validate_dataset
    ds = validate_dataset(small_synth.patients, small_synth.labs)
    cohort = build_cohort(ds, WINDOW)
    schema = FeatureSchema.for_dataset(ds)
    window = HistoryWindow(anchor_mode=anchor)
    X = feature_matrix(cohort, ds, schema, window)
    rng = np.random.default_rng(0)
    for i in rng.choice(len(cohort), 25, replace=False):
        v = assemble_features(cohort.events[i], ds, cohort, schema, window=window).values
        np.testing.assert_allclose(v, X[i], rtol=1e-12, equal_nan=True)


def test_scaler_imputes_with_pooled_training_mean():
    s = FeatureSchema(("NA",), include_std=False)
    X = np.full((3, len(s)), np.nan)
    X[:, 0] = [50, 60, 70]
    X[:, 1] = [1, 0, 1]
    c = s.history_columns("NA")
    X[0, [c["mean"], c["count"], c["min"], c["max"], c["sum"]]] = [140, 2, 139, 141, 280]
    X[1, [c["mean"], c["count"], c["min"], c["max"], c["sum"]]] = [130, 1, 130, 130, 130]
    X[2, c["count"]] = 0
    st_ = fit_scaler(X, s, scale=False)
    filled = st_.fill(X)
    assert filled[2, c["mean"]] == pytest.approx(410 / 3)
    assert filled[2, c["count"]] == 0
    assert not np.isnan(filled).any()
    np.testing.assert_array_equal(st_.transform(X), filled)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31))
def test_scaled_training_rows_are_standardised(n, seed):
    s = FeatureSchema(("NA",))
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, len(s))) * rng.uniform(0.1, 100, len(s)) + rng.uniform(-50, 50, len(s))
    X[:, 2:11][rng.random((n, 9)) < 0.2] = np.nan     # missing CBC values
    X[:, 3] = 7.0                                     # constant column
    c = s.history_columns("NA")
    count = rng.integers(0, 4, n).astype(float)
    X[:, c["count"]] = count
    X[:, c["sum"]] = X[:, c["mean"]] * count
    empty = np.nonzero(count == 0)[0]
    X[np.ix_(empty, [c["mean"], c["min"], c["max"], c["sum"]])] = np.nan
    X[empty, c["std"]] = 0.0
    sc = fit_scaler(X, s)
    Z = sc.transform(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    sd = Z.std(axis=0)
    assert np.all((np.abs(sd - 1) < 1e-9) | (sd == 0))
    assert np.all(Z[:, 3] == 0)


def test_scaler_needs_two_rows():
    with pytest.raises(InsufficientData):
        fit_scaler(np.zeros((1, 23)), FeatureSchema(("NA", "FERRITIN")))
    with pytest.raises(SchemaVersionError):
        fit_scaler(np.zeros((4, 5)), FeatureSchema(("NA",)))


def test_features_directory_round_trip(tmp_path, tiny_dataset):
    cohort = build_cohort(tiny_dataset, WINDOW)
    schema = FeatureSchema.for_dataset(tiny_dataset)
    X = feature_matrix(cohort, tiny_dataset, schema)
    save_features(tmp_path, cohort, X, schema, HistoryWindow())
    fs = load_features(tmp_path)
    np.testing.assert_array_equal(fs.X, X)
    assert list(fs.event_ids) == list(cohort.event_ids)
    assert list(fs.labels) == list(cohort.labels)
    assert fs.schema == schema
