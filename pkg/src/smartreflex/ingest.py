"""Reading and validating the patients and lab-results files.

Lab results are held column-wise in a :class:`LabTable` (numpy arrays) since
real extracts run to millions of rows; iterating a table yields
:class:`~smartreflex.catalog.LabResult` records.
"""
from __future__ import annotations

import csv
import io
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Iterable, TextIO

import numpy as np
import pandas as pd

from .catalog import ANALYTE_CODES, Gender, LabResult, Patient
from .errors import DatasetMismatch, DuplicatePatient, IngestError

log = logging.getLogger(__name__)

PATIENT_COLUMNS = ("patient_id", "gender", "birth_date")
LAB_COLUMNS = ("patient_id", "analyte", "value", "collected_at")
ORPHAN_LIMIT = 0.5

_RFC3339 = re.compile(
    r"^\d{4}-\d{2}-\d{2}[Tt ]\d{2}:\d{2}:\d{2}(\.\d{1,9})?([Zz]|[+-]\d{2}:\d{2})$"
)
_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_NUMBER = r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$"


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_accepted: int = 0
    rows_rejected: int = 0
    rejection_reasons: Counter = field(default_factory=Counter)

    def reject(self, reason: str, n: int = 1) -> None:
        if n <= 0:
            return
        self.rows_rejected += n
        self.rejection_reasons[reason] += n

    def merge(self, other: "IngestReport") -> "IngestReport":
        return IngestReport(
            self.rows_read + other.rows_read,
            self.rows_accepted + other.rows_accepted,
            self.rows_rejected + other.rows_rejected,
            self.rejection_reasons + other.rejection_reasons,
        )


# ---------------------------------------------------------------------------
# columnar lab results


def to_utc_naive(ts) -> np.datetime64:
    ts = pd.Timestamp(ts)
    if ts.tzinfo is not None:
        ts = ts.tz_convert("UTC").tz_localize(None)
    return ts.to_datetime64().astype("datetime64[ns]")


class LabTable:
    """Lab results stored as parallel arrays.

    ``collected_at`` is ``datetime64[ns]`` in UTC. Rows are kept sorted by
    ``(patient_id, collected_at)``; ties keep their input order.
    """

    __slots__ = ("patient_id", "analyte", "value", "collected_at")

    def __init__(self, patient_id, analyte, value, collected_at, *, presorted=False):
        pid = np.asarray(patient_id, dtype=object)
        ana = np.asarray(analyte, dtype=object)
        val = np.asarray(value, dtype=np.float64)
        ts = np.asarray(collected_at, dtype="datetime64[ns]")
        if not (len(pid) == len(ana) == len(val) == len(ts)):
            raise ValueError("LabTable columns must have equal length")
        if not presorted and len(pid):
            _, codes = np.unique(pid, return_inverse=True)
            order = np.lexsort((ts.view(np.int64), codes))
            pid, ana, val, ts = pid[order], ana[order], val[order], ts[order]
        self.patient_id = pid
        self.analyte = ana
        self.value = val
        self.collected_at = ts
        for arr in (pid, ana, val, ts):
            arr.flags.writeable = False

    @classmethod
    def empty(cls) -> "LabTable":
        return cls([], [], [], np.array([], dtype="datetime64[ns]"), presorted=True)

    @classmethod
    def from_records(cls, records: Iterable[LabResult]) -> "LabTable":
        records = list(records)
        return cls(
            [r.patient_id for r in records],
            [r.analyte for r in records],
            [r.value for r in records],
            np.array([to_utc_naive(r.collected_at) for r in records], dtype="datetime64[ns]"),
        )

    def __len__(self) -> int:
        return len(self.value)

    def __getitem__(self, i: int) -> LabResult:
        ts = utc(self.collected_at[i])
        return LabResult(str(self.patient_id[i]), str(self.analyte[i]), float(self.value[i]), ts)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def select(self, mask) -> "LabTable":
        return LabTable(self.patient_id[mask], self.analyte[mask], self.value[mask],
                        self.collected_at[mask], presorted=True)

    def for_analyte(self, code: str) -> "LabTable":
        return self.select(self.analyte == code)

    def equals(self, other: "LabTable") -> bool:
        return (
            len(self) == len(other)
            and np.array_equal(self.patient_id, other.patient_id)
            and np.array_equal(self.analyte, other.analyte)
            and np.array_equal(self.value, other.value)
            and np.array_equal(self.collected_at, other.collected_at)
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "patient_id": self.patient_id,
            "analyte": self.analyte,
            "value": self.value,
            "collected_at": self.collected_at,
        })


# ---------------------------------------------------------------------------
# parsing


def _read_rows(stream: TextIO | str) -> tuple[list[str] | None, list[list[str]]]:
    text = stream if isinstance(stream, str) else stream.read()
    try:
        rows = [r for r in csv.reader(io.StringIO(text, newline="")) if r]
    except csv.Error:
        # NUL bytes or broken quoting: fall back to one record per physical line
        rows = []
        for line in text.splitlines():
            if not line:
                continue
            try:
                rows.extend(r for r in csv.reader([line]) if r)
            except csv.Error:
                rows.append([line, "\0"])  # field count forces a 'malformed' rejection
    if not rows:
        return None, []
    header = [h.strip().lstrip("﻿") for h in rows[0]]
    return header, rows[1:]


def _check_header(header, expected, what):
    if tuple(header) != expected:
        raise IngestError(f"{what}: expected header {','.join(expected)}, got {','.join(header)}")


def _strict_fail(report: IngestReport, what: str):
    reason, n = next(iter(report.rejection_reasons.items()))
    raise IngestError(f"{what}: {n} row(s) rejected ({reason}) in strict mode")


def parse_patients(stream: TextIO | str, *, strict: bool = False) -> tuple[list[Patient], IngestReport]:
    """Parse a ``patient_id,gender,birth_date`` file.

    Malformed rows are rejected and tallied; a repeated ``patient_id`` is
    a structural failure and raises :class:`DuplicatePatient`.
    """
    report = IngestReport()
    header, rows = _read_rows(stream)
    if header is None:
        return [], report
    _check_header(header, PATIENT_COLUMNS, "patients")
    patients: list[Patient] = []
    seen: set[str] = set()
    for row in rows:
        report.rows_read += 1
        if len(row) != len(PATIENT_COLUMNS):
            report.reject("malformed")
            continue
        pid, gender, birth = (c.strip() for c in row)
        if not pid:
            report.reject("missing_patient_id")
            continue
        g = gender.upper()
        if g not in ("M", "F"):
            report.reject("bad_gender")
            continue
        if not _ISO_DATE.match(birth):
            report.reject("bad_birth_date")
            continue
        try:
            bdate = date.fromisoformat(birth)
        except ValueError:
            report.reject("bad_birth_date")
            continue
        if pid in seen:
            raise DuplicatePatient(f"patient_id {pid!r} appears more than once")
        seen.add(pid)
        patients.append(Patient(pid, Gender.MALE if g == "M" else Gender.FEMALE, bdate))
        report.rows_accepted += 1
    if report.rows_rejected:
        log.warning("patients: rejected %d of %d rows %s", report.rows_rejected,
                    report.rows_read, dict(report.rejection_reasons))
        if strict:
            _strict_fail(report, "patients")
    return patients, report


def parse_lab_results(stream: TextIO | str, catalog=ANALYTE_CODES, *,
                      strict: bool = False) -> tuple[LabTable, IngestReport]:
    """Parse a ``patient_id,analyte,value,collected_at`` file.

    Timestamps must be RFC 3339 with an explicit offset; they are stored in
    UTC. Each rejected row is tallied under the first failing check:
    ``malformed``, ``missing_patient_id``, ``unknown_analyte``,
    ``bad_value`` or ``bad_timestamp``.
    """
    report = IngestReport()
    header, rows = _read_rows(stream)
    if header is None:
        return LabTable.empty(), report
    _check_header(header, LAB_COLUMNS, "labs")
    report.rows_read = len(rows)
    if not rows:
        return LabTable.empty(), report

    width_ok = np.fromiter((len(r) == 4 for r in rows), dtype=bool, count=len(rows))
    report.reject("malformed", int((~width_ok).sum()))
    good = [r for r, ok in zip(rows, width_ok) if ok]
    frame = pd.DataFrame(good, columns=list(LAB_COLUMNS), dtype=object)
    for col in LAB_COLUMNS:
        frame[col] = frame[col].str.strip()

    ok = np.ones(len(frame), dtype=bool)

    def reject_where(bad, reason):
        nonlocal ok
        bad = np.asarray(bad, dtype=bool) & ok
        report.reject(reason, int(bad.sum()))
        ok &= ~bad

    reject_where(frame["patient_id"].eq("").to_numpy(), "missing_patient_id")
    reject_where(~frame["analyte"].isin(set(catalog)).to_numpy(), "unknown_analyte")
    # pandas' own float parser is not correctly rounded; numpy's str->float is
    numeric = frame["value"].str.match(_NUMBER).fillna(False).to_numpy(dtype=bool)
    values = np.full(len(frame), np.nan)
    with np.errstate(over="ignore"):
        values[numeric] = frame["value"].to_numpy()[numeric].astype(str).astype(np.float64)
    reject_where(~np.isfinite(values), "bad_value")
    ts_text = frame["collected_at"]
    shape_ok = ts_text.str.match(_RFC3339).fillna(False).to_numpy(dtype=bool)
    stamps = pd.to_datetime(ts_text.where(shape_ok), format="ISO8601", utc=True, errors="coerce")
    reject_where(stamps.isna().to_numpy(), "bad_timestamp")

    report.rows_accepted = int(ok.sum())
    if report.rows_rejected:
        log.warning("labs: rejected %d of %d rows %s", report.rows_rejected,
                    report.rows_read, dict(report.rejection_reasons))
        if strict:
            _strict_fail(report, "labs")
    kept = stamps[ok].dt.tz_localize(None).to_numpy(dtype="datetime64[ns]")
    table = LabTable(frame["patient_id"].to_numpy()[ok], frame["analyte"].to_numpy()[ok],
                     values[ok], kept)
    return table, report


# ---------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class Dataset:
    patients: dict[str, Patient]
    results: LabTable
    provenance: dict = field(default_factory=dict)
    warnings: Counter = field(default_factory=Counter)

    def patient_ids(self) -> list[str]:
        return sorted(self.patients)


def validate_dataset(patients: Iterable[Patient], results: LabTable, *, provenance=None,
                     strict: bool = False) -> Dataset:
    """Join parsed patients and results into a :class:`Dataset`.

    Results for unknown patients are dropped and counted as
    ``orphan_result``; results dated before the patient's birth are dropped
    as ``before_birth``. More than half orphaned rows raises
    :class:`DatasetMismatch` (most likely the wrong pair of files).
    """
    by_id: dict[str, Patient] = {}
    for p in patients:
        if p.patient_id in by_id:
            raise DuplicatePatient(f"patient_id {p.patient_id!r} appears more than once")
        by_id[p.patient_id] = p
    warnings: Counter = Counter()
    n = len(results)
    if n == 0:
        return Dataset(by_id, results, dict(provenance or {}), warnings)

    pids = pd.Series(results.patient_id)
    known = pids.isin(by_id.keys()).to_numpy()
    n_orphan = int((~known).sum())
    if n_orphan / n > ORPHAN_LIMIT:
        raise DatasetMismatch(f"{n_orphan} of {n} results reference unknown patients")
    if n_orphan:
        warnings["orphan_result"] = n_orphan
        log.warning("dropped %d results for unknown patients", n_orphan)

    birth_of = {pid: np.datetime64(p.birth_date, "ns") for pid, p in by_id.items()}
    births = pd.to_datetime(pids.map(birth_of)).to_numpy(dtype="datetime64[ns]")
    before = known & (results.collected_at < births)
    if before.any():
        warnings["before_birth"] = int(before.sum())
        log.warning("dropped %d results dated before the patient's birth", int(before.sum()))
    if strict and warnings:
        raise IngestError(f"dataset validation dropped rows in strict mode: {dict(warnings)}")
    kept = results.select(known & ~before) if warnings else results
    return Dataset(by_id, kept, dict(provenance or {}), warnings)


def load_dataset(patients_path, labs_path, *, strict: bool = False) -> tuple[Dataset, IngestReport]:
    with open(patients_path, encoding="utf-8", newline="") as fh:
        patients, prep = parse_patients(fh, strict=strict)
    with open(labs_path, encoding="utf-8", newline="") as fh:
        labs, lrep = parse_lab_results(fh, strict=strict)
    provenance = {
        str(patients_path): prep.rows_read,
        str(labs_path): lrep.rows_read,
    }
    return validate_dataset(patients, labs, provenance=provenance, strict=strict), prep.merge(lrep)


# ---------------------------------------------------------------------------
# writing


def format_timestamps(ts: np.ndarray) -> np.ndarray:
    """RFC 3339 UTC strings; fractional seconds only when any are present."""
    ts = np.asarray(ts, dtype="datetime64[ns]")
    whole = (ts.view(np.int64) % 1_000_000_000 == 0).all() if len(ts) else True
    text = np.datetime_as_string(ts, unit="s" if whole else "ns")
    return np.char.add(text.astype(str), "Z")


def format_values(values: np.ndarray) -> list[str]:
    return [repr(float(v)) for v in values]


def write_patients(patients: Iterable[Patient], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PATIENT_COLUMNS)
    for p in sorted(patients, key=lambda p: p.patient_id):
        w.writerow([p.patient_id, "M" if p.gender is Gender.MALE else "F", p.birth_date.isoformat()])


def write_labs(table: LabTable, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LAB_COLUMNS)
    w.writerows(zip(table.patient_id, table.analyte, format_values(table.value),
                    format_timestamps(table.collected_at)))


def write_dataset(dataset: Dataset, patients_fh: TextIO, labs_fh: TextIO) -> None:
    write_patients(dataset.patients.values(), patients_fh)
    write_labs(dataset.results, labs_fh)


def utc(ts) -> datetime:
    """UTC-aware ``datetime`` from a naive-UTC numpy/pandas timestamp."""
    ts = pd.Timestamp(ts)
    return (ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")).to_pydatetime()


__all__ = [
    "Dataset", "IngestReport", "LabTable", "load_dataset", "parse_lab_results",
    "parse_patients", "validate_dataset", "write_dataset", "write_labs", "write_patients",
    "format_timestamps", "utc",
]
