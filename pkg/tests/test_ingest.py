import io
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartreflex.catalog import ANALYTE_CODES, Gender, LabResult, Patient
from smartreflex.errors import DatasetMismatch, DuplicatePatient, IngestError
from smartreflex.ingest import (
    LabTable, format_timestamps, parse_lab_results, parse_patients, validate_dataset, write_labs, write_patients,
)

LAB_HEADER = "patient_id,analyte,value,collected_at\n"


def test_parse_patients_basic():
    pts, rep = parse_patients("patient_id,gender,birth_date\na,M,1980-02-03\nb,f,1990-12-31\n")
    assert [p.patient_id for p in pts] == ["a", "b"]
    assert pts[1].gender is Gender.FEMALE and pts[0].birth_date == date(1980, 2, 3)
    assert (rep.rows_read, rep.rows_accepted, rep.rows_rejected) == (2, 2, 0)


def test_parse_patients_rejections():
    text = ("patient_id,gender,birth_date\n"
            ",M,1980-01-01\n"          # missing id
            "a,X,1980-01-01\n"         # bad gender
            "b,M,1980-13-01\n"         # impossible date
            "c,M,01/02/1980\n"         # not ISO
            "d,M\n"                    # short row
            "e,F,1970-01-01\n")
    pts, rep = parse_patients(text)
    assert [p.patient_id for p in pts] == ["e"]
    assert rep.rejection_reasons == {"missing_patient_id": 1, "bad_gender": 1, "bad_birth_date": 2, "malformed": 1}


def test_duplicate_patient_is_fatal():
    with pytest.raises(DuplicatePatient):
        parse_patients("patient_id,gender,birth_date\na,M,1980-01-01\na,F,1981-01-01\n")


def test_wrong_header_is_fatal():
    with pytest.raises(IngestError):
        parse_patients("id,sex,dob\na,M,1980-01-01\n")


def test_strict_mode_raises_on_rejection():
    with pytest.raises(IngestError):
        parse_patients("patient_id,gender,birth_date\na,Q,1980-01-01\n", strict=True)
    with pytest.raises(IngestError):
        parse_lab_results(LAB_HEADER + "a,HCT,abc,2019-01-01T00:00:00Z\n", strict=True)


def test_parse_labs_rejection_reasons():
    text = LAB_HEADER + "\n".join([
        "a,HCT,40.1,2019-01-01T10:00:00Z",
        ",HCT,40,2019-01-01T10:00:00Z",
        "a,FOO,40,2019-01-01T10:00:00Z",
        "a,HCT,nan,2019-01-01T10:00:00Z",
        "a,HCT,inf,2019-01-01T10:00:00Z",
        "a,HCT,,2019-01-01T10:00:00Z",
        "a,HCT,1_000,2019-01-01T10:00:00Z",
        "a,HCT,40,2019-01-01",
        "a,HCT,40,2019-01-01T10:00:00",          # no offset
        "a,HCT,40,2019-02-30T10:00:00Z",
        "a,HCT,40",
    ]) + "\n"
    table, rep = parse_lab_results(text)
    assert len(table) == 1 and table.value[0] == 40.1
    assert rep.rows_read == 11 and rep.rows_accepted == 1
    assert rep.rejection_reasons == {"missing_patient_id": 1, "unknown_analyte": 1, "bad_value": 4,
                                     "bad_timestamp": 3, "malformed": 1}


def test_timestamps_normalised_to_utc():
    text = LAB_HEADER + "a,HCT,40,2019-03-10T05:00:00-05:00\na,MCV,80,2019-03-10T10:00:00.5+00:00\n"
    table, _ = parse_lab_results(text)
    assert table.collected_at[0] == np.datetime64("2019-03-10T10:00:00", "ns")
    assert table.collected_at[1] == np.datetime64("2019-03-10T10:00:00.500", "ns")
    assert table[0].collected_at == datetime(2019, 3, 10, 10, tzinfo=timezone.utc)


def test_rows_sorted_by_patient_then_time():
    text = LAB_HEADER + ("b,HCT,1,2019-01-02T00:00:00Z\n"
                         "a,HCT,2,2019-01-03T00:00:00Z\n"
                         "a,MCV,3,2019-01-01T00:00:00Z\n")
    table, _ = parse_lab_results(text)
    assert list(table.patient_id) == ["a", "a", "b"]
    assert list(table.value) == [3.0, 2.0, 1.0]


def test_garbage_bytes_do_not_crash():
    text = LAB_HEADER + 'a,HCT,"40\0,2019\n\0\0\0\nx,"y\n'
    table, rep = parse_lab_results(text)
    assert rep.rows_rejected == rep.rows_read - rep.rows_accepted


def test_empty_input():
    table, rep = parse_lab_results("")
    assert len(table) == 0 and rep.rows_read == 0


def test_validate_drops_orphans_and_pre_birth():
    pts = [Patient("a", Gender.MALE, date(2000, 1, 1))]
    recs = [LabResult("a", "HCT", 40.0, datetime(2019, 1, 1, tzinfo=timezone.utc)),
            LabResult("a", "HCT", 40.0, datetime(2019, 2, 1, tzinfo=timezone.utc)),
            LabResult("a", "HCT", 40.0, datetime(1999, 1, 1, tzinfo=timezone.utc)),
            LabResult("zz", "HCT", 40.0, datetime(2019, 1, 1, tzinfo=timezone.utc))]
    ds = validate_dataset(pts, LabTable.from_records(recs))
    assert len(ds.results) == 2
    assert ds.warnings == {"orphan_result": 1, "before_birth": 1}
    with pytest.raises(IngestError):
        validate_dataset(pts, LabTable.from_records(recs), strict=True)


def test_mostly_orphaned_results_mean_wrong_files():
    pts = [Patient("a", Gender.MALE, date(2000, 1, 1))]
    recs = [LabResult(f"x{i}", "HCT", 40.0, datetime(2019, 1, 1, tzinfo=timezone.utc)) for i in range(3)]
    with pytest.raises(DatasetMismatch):
        validate_dataset(pts, LabTable.from_records(recs))


def test_duplicate_patient_objects_rejected():
    p = Patient("a", Gender.MALE, date(2000, 1, 1))
    with pytest.raises(DuplicatePatient):
        validate_dataset([p, p], LabTable.empty())


def test_format_timestamps():
    t = np.array(["2019-01-01T00:00:00", "2019-01-01T00:00:01"], dtype="datetime64[ns]")
    assert list(format_timestamps(t)) == ["2019-01-01T00:00:00Z", "2019-01-01T00:00:01Z"]
    t = np.array(["2019-01-01T00:00:00.25"], dtype="datetime64[ns]")
    assert list(format_timestamps(t)) == ["2019-01-01T00:00:00.250000000Z"]


_ids = st.text(alphabet="abcxyz0123456789_-", min_size=1, max_size=6)
_records = st.lists(st.tuples(
    _ids, st.sampled_from(ANALYTE_CODES),
    st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
    st.integers(0, 10**9), st.integers(0, 999_999_999)), max_size=40)


@settings(max_examples=60, deadline=None)
@given(_records)
def test_labs_write_read_round_trip(records):
    base = np.datetime64("2000-01-01T00:00:00", "ns")
    table = LabTable([r[0] for r in records], [r[1] for r in records], [r[2] for r in records],
                     np.array([base + np.timedelta64(s, "s") + np.timedelta64(ns, "ns") for _, _, _, s, ns in records],
                              dtype="datetime64[ns]"))
    buf = io.StringIO()
    write_labs(table, buf)
    back, rep = parse_lab_results(buf.getvalue())
    assert rep.rows_rejected == 0
    assert back.equals(table)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(_ids, st.tuples(st.sampled_from([Gender.MALE, Gender.FEMALE]),
                                        st.dates(date(1900, 1, 1), date(2020, 1, 1))), max_size=20))
def test_patients_write_read_round_trip(pmap):
    pts = [Patient(pid, g, b) for pid, (g, b) in pmap.items()]
    buf = io.StringIO()
    write_patients(pts, buf)
    back, rep = parse_patients(buf.getvalue())
    assert sorted(back, key=lambda p: p.patient_id) == sorted(pts, key=lambda p: p.patient_id)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.text(max_size=12), min_size=0, max_size=6), max_size=15))
def test_arbitrary_rows_are_tallied_not_crashing(rows):
    import csv
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", escapechar="\\")
    w.writerow(["patient_id", "analyte", "value", "collected_at"])
    w.writerows(rows)
    table, rep = parse_lab_results(buf.getvalue())
    assert rep.rows_accepted + rep.rows_rejected == rep.rows_read
    assert len(table) == rep.rows_accepted
