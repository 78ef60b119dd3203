import io
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartreflex.catalog import FERRITIN, Gender, LabResult, Patient
from smartreflex.cohort import (
    LabelMode, LabelPolicy, build_cohort, event_id_for, extract_cbc_events, infer_study_window, label_event,
    label_table, read_cohort, write_cohort,
)
from smartreflex.errors import EmptyCohort
from smartreflex.ingest import LabTable, validate_dataset

UTC = timezone.utc
WINDOW = (date(2019, 1, 1), date(2019, 12, 31))


def test_extract_events(tiny_dataset):
    events = extract_cbc_events(tiny_dataset, WINDOW)
    assert [(e.patient_id, e.t.month) for e in events] == [("p1", 3), ("p2", 6), ("p2", 8), ("p2", 9)]
    e = events[0]
    assert e.cbc_values["HCT"] == 33.0 and e.cbc_values["PLT"] is None
    assert e.gender is Gender.FEMALE
    assert e.age_years == pytest.approx((datetime(2019, 3, 10, 9) - datetime(1970, 5, 1)).total_seconds()
                                        / 86400 / 365.25)


def test_missing_cbc_value_backfilled_from_prior_30_days(tiny_dataset):
    events = extract_cbc_events(tiny_dataset, WINDOW)
    sept = events[3]
    assert sept.cbc_values["RDW"] == 13.0       # 12 days earlier
    assert events[2].cbc_values["HCT"] is None  # a lone RDW draw is its own event
    assert sept.cbc_values["MCV"] is None       # 92 days earlier: too old


def test_labels(tiny_dataset):
    cohort = build_cohort(tiny_dataset, WINDOW)
    assert list(cohort.labels) == [True, False, False, False]
    assert cohort.stats.n_events == 4 and cohort.stats.n_patients == 2
    assert cohort.stats.positive_rate == pytest.approx(1 / 4)


def test_event_ids_are_deterministic(tiny_dataset):
    a = build_cohort(tiny_dataset, WINDOW)
    b = build_cohort(tiny_dataset, WINDOW)
    assert list(a.event_ids) == list(b.event_ids)
    assert a.event_ids[0] == event_id_for("p1", datetime(2019, 3, 10, 9, tzinfo=UTC))
    assert len(set(a.event_ids)) == 4


def test_study_window_is_inclusive_of_whole_end_day(tiny_dataset):
    assert len(build_cohort(tiny_dataset, (date(2019, 3, 10), date(2019, 3, 10)))) == 1
    assert len(build_cohort(tiny_dataset, ("2019-06-01", "2019-09-01"))) == 3
    with pytest.raises(EmptyCohort):
        build_cohort(tiny_dataset, (date(2020, 1, 1), date(2020, 2, 1)))
    with pytest.raises(ValueError):
        build_cohort(tiny_dataset, (date(2019, 5, 1), date(2019, 4, 1)))


def test_infer_study_window(tiny_dataset):
    assert infer_study_window(tiny_dataset) == (date(2019, 3, 10), date(2019, 9, 1))


def _one_event(ferritin_offsets):
    p = Patient("a", Gender.MALE, date(1960, 1, 1))
    t = datetime(2019, 5, 1, 12, tzinfo=UTC)
    recs = [LabResult("a", "HCT", 40.0, t)]
    recs += [LabResult("a", FERRITIN, 50.0, t + d) for d in ferritin_offsets]
    return validate_dataset([p], LabTable.from_records(recs))


@pytest.mark.parametrize("offset,primary,refined", [
    (timedelta(0), True, True),
    (timedelta(days=30), True, True),
    (timedelta(days=30, seconds=1), False, False),
    (timedelta(seconds=-1), False, True),
    (timedelta(hours=-1), False, True),
    (timedelta(hours=-1, seconds=-1), False, False),
])
def test_label_window_boundaries(offset, primary, refined):
    ds = _one_event([offset])
    assert build_cohort(ds, WINDOW, LabelPolicy.primary()).labels[0] == primary
    assert build_cohort(ds, WINDOW, LabelPolicy.refined()).labels[0] == refined


def test_relabel_only_adds_positives(tiny_dataset):
    ds = _one_event([timedelta(minutes=-5)])
    c = build_cohort(ds, WINDOW)
    r = c.relabel(ds, LabelPolicy.refined())
    assert not c.labels[0] and r.labels[0]
    assert r.policy.mode is LabelMode.REFINED


def test_policy_validation():
    with pytest.raises(ValueError):
        LabelPolicy(post_window=timedelta(0))
    with pytest.raises(ValueError):
        LabelPolicy(LabelMode.REFINED, pre_window=timedelta(0))


def test_cohort_csv_round_trip(tiny_dataset):
    c = build_cohort(tiny_dataset, WINDOW)
    buf = io.StringIO()
    write_cohort(c, buf)
    buf.seek(0)
    back = read_cohort(buf)
    pd.testing.assert_frame_equal(back.table, c.table, check_dtype=False)
    buf2 = io.StringIO()
    write_cohort(back, buf2)
    assert buf2.getvalue() == buf.getvalue()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-3 * 86400, 40 * 86400), max_size=6), st.sampled_from(["primary", "refined"]))
def test_vectorised_labels_match_record_labels(offsets_s, mode):
    ds = _one_event([timedelta(seconds=s) for s in offsets_s])
    policy = LabelPolicy(mode)
    cohort = build_cohort(ds, WINDOW, policy)
    fer = list(ds.results.for_analyte(FERRITIN))
    for event, label in zip(cohort.events, cohort.labels):
        assert label_event(event, fer, policy) == label


def test_label_table_reports_the_deciding_ferritin():
    ds = _one_event([timedelta(days=3), timedelta(days=10)])
    c = build_cohort(ds, WINDOW)
    lab = label_table(c.table, ds.results.for_analyte(FERRITIN), LabelPolicy())
    assert lab["ferritin_t"].iloc[0] == np.datetime64("2019-05-04T12:00:00")
