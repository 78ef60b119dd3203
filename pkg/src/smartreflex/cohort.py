"""CBC-events and their ferritin-ordered labels.

A CBC-event is one (patient, timestamp) at which at least one of the nine
CBC parameters was reported inside the study window. Parameters missing at
that timestamp are filled from the most recent earlier result within
30 days.
"""
from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np
import pandas as pd

from .catalog import CBC_CODES, DAYS_PER_YEAR, FERRITIN, Gender, LabResult
from .errors import EmptyCohort, IngestError
from .ingest import Dataset, LabTable, format_timestamps, to_utc_naive, utc

BACKFILL_WINDOW = timedelta(days=30)
COHORT_COLUMNS = ("event_id", "patient_id", "t", "label", "age_years", "gender") + CBC_CODES


class LabelMode(str, enum.Enum):
    PRIMARY = "primary"
    REFINED = "refined"


@dataclass(frozen=True)
class LabelPolicy:
    """Which ferritin collections count as "ordered" for a CBC at time t.

    ``primary``: t <= collected <= t + post_window.
    ``refined``: additionally t - pre_window <= collected < t.
    """

    mode: LabelMode = LabelMode.PRIMARY
    post_window: timedelta = timedelta(days=30)
    pre_window: timedelta = timedelta(hours=1)

    def __post_init__(self):
        object.__setattr__(self, "mode", LabelMode(self.mode))
        if self.post_window <= timedelta(0):
            raise ValueError("post_window must be positive")
        if self.mode is LabelMode.REFINED and self.pre_window <= timedelta(0):
            raise ValueError("refined policy needs a positive pre_window")

    @classmethod
    def primary(cls) -> "LabelPolicy":
        return cls(LabelMode.PRIMARY)

    @classmethod
    def refined(cls) -> "LabelPolicy":
        return cls(LabelMode.REFINED)


@dataclass(frozen=True)
class CbcEvent:
    event_id: str
    patient_id: str
    t: datetime
    cbc_values: dict[str, float | None]
    age_years: float
    gender: Gender
    label: bool | None = None


def event_ids(patient_ids, times) -> list[str]:
    """Deterministic ids: truncated SHA-1 of ``patient_id|t`` (t at ns resolution, UTC)."""
    stamps = np.datetime_as_string(np.asarray(times, dtype="datetime64[ns]"), unit="ns")
    return [hashlib.sha1(f"{p}|{s}Z".encode()).hexdigest()[:16] for p, s in zip(patient_ids, stamps)]


def event_id_for(patient_id: str, t) -> str:
    return event_ids([patient_id], np.array([to_utc_naive(t)]))[0]


def _window_bounds(study_window) -> tuple[np.datetime64, np.datetime64]:
    start, end = (pd.Timestamp(d) for d in study_window)
    if end < start:
        raise ValueError(f"study window {study_window} is not well-ordered")
    last = study_window[1]
    whole_day = (isinstance(last, date) and not isinstance(last, datetime)) or (
        isinstance(last, str) and len(last.strip()) == 10)
    if whole_day:
        end = end + pd.Timedelta(days=1)  # whole end date is inside the window
    else:
        end = end + pd.Timedelta(1, "ns")
    return start.to_datetime64(), end.to_datetime64()


def _asof(left: pd.DataFrame, right: pd.DataFrame, direction: str, tolerance, exact: bool) -> pd.DataFrame:
    """Per left row, the matched right time and value (NaT/NaN if none), on left's index."""
    if right.empty or left.empty:
        return pd.DataFrame({"_match_t": pd.Series(pd.NaT, index=left.index, dtype="datetime64[ns]"),
                             "_match_v": np.nan}, index=left.index)
    r = right[["patient_id", "collected_at", "value"]].sort_values("collected_at", kind="stable")
    r = r.rename(columns={"collected_at": "_match_t", "value": "_match_v"})
    l = left[["patient_id", "t"]].reset_index().sort_values("t", kind="stable")
    merged = pd.merge_asof(l, r, left_on="t", right_on="_match_t", by="patient_id",
                           direction=direction, tolerance=pd.Timedelta(tolerance),
                           allow_exact_matches=exact)
    return merged.set_index("index")[["_match_t", "_match_v"]].reindex(left.index)


def _event_table(dataset: Dataset, study_window) -> pd.DataFrame:
    labs = dataset.results.to_frame()
    cbc = labs[labs["analyte"].isin(CBC_CODES)]
    lo, hi = _window_bounds(study_window)
    inside = cbc[(cbc["collected_at"] >= lo) & (cbc["collected_at"] < hi)]
    events = (inside[["patient_id", "collected_at"]].drop_duplicates()
              .rename(columns={"collected_at": "t"})
              .sort_values(["patient_id", "t"], kind="stable")
              .reset_index(drop=True))
    for code in CBC_CODES:
        obs = cbc[cbc["analyte"] == code]
        matched = _asof(events, obs, "backward", BACKFILL_WINDOW, exact=True)
        events[code] = matched["_match_v"].to_numpy(dtype=float)
    births = {pid: pd.Timestamp(p.birth_date) for pid, p in dataset.patients.items()}
    genders = {pid: p.gender.value for pid, p in dataset.patients.items()}
    birth = pd.to_datetime(events["patient_id"].map(births))
    events["age_years"] = ((events["t"] - birth).dt.total_seconds() / 86400.0 / DAYS_PER_YEAR).astype(float)
    events["gender"] = events["patient_id"].map(genders)
    events.insert(0, "event_id", event_ids(events["patient_id"], events["t"].to_numpy()))
    return events


def _row_to_event(row, label=None) -> CbcEvent:
    values = {c: (None if pd.isna(row[c]) else float(row[c])) for c in CBC_CODES}
    return CbcEvent(row["event_id"], row["patient_id"], utc(row["t"]), values,
                    float(row["age_years"]), Gender(row["gender"]), label)


def extract_cbc_events(dataset: Dataset, study_window) -> list[CbcEvent]:
    """Unlabeled CBC-events inside ``study_window`` (inclusive dates), ordered by (patient, t)."""
    table = _event_table(dataset, study_window)
    return [_row_to_event(row) for _, row in table.iterrows()]


def label_event(event: CbcEvent, ferritin_results: Iterable[LabResult], policy: LabelPolicy = LabelPolicy()) -> bool:
    """Whether a ferritin was collected in the policy's window around ``event.t``."""
    t = event.t
    for r in ferritin_results:
        if r.patient_id != event.patient_id or r.analyte != FERRITIN:
            continue
        at = r.collected_at
        if t <= at <= t + policy.post_window:
            return True
        if policy.mode is LabelMode.REFINED and t - policy.pre_window <= at < t:
            return True
    return False


def label_table(events: pd.DataFrame, ferritin: LabTable, policy: LabelPolicy) -> pd.DataFrame:
    """Vectorised labeling.

    Returns ``label`` plus the time and value of the ferritin that set it
    (earliest in the post window; otherwise the latest pre-CBC one for the
    refined policy).
    """
    fer = ferritin.to_frame()
    post = _asof(events, fer, "forward", policy.post_window, exact=True)
    out = pd.DataFrame({"label": post["_match_t"].notna().to_numpy(),
                        "ferritin_t": post["_match_t"].to_numpy(),
                        "ferritin_value": post["_match_v"].to_numpy(dtype=float)},
                       index=events.index)
    if policy.mode is LabelMode.REFINED:
        pre = _asof(events, fer, "backward", policy.pre_window, exact=False)
        use = ~out["label"].to_numpy() & pre["_match_t"].notna().to_numpy()
        out.loc[use, "label"] = True
        out.loc[use, "ferritin_t"] = pre["_match_t"].to_numpy()[use]
        out.loc[use, "ferritin_value"] = pre["_match_v"].to_numpy(dtype=float)[use]
    return out


@dataclass(frozen=True)
class CohortStats:
    n_events: int
    n_patients: int
    n_positive: int
    positive_rate: float

    @classmethod
    def of(cls, table: pd.DataFrame) -> "CohortStats":
        n = len(table)
        pos = int(table["label"].sum())
        return cls(n, int(table["patient_id"].nunique()), pos, pos / n if n else float("nan"))


@dataclass(frozen=True)
class Cohort:
    """Labeled CBC-events. ``table`` is the columnar form (one row per event)."""

    table: pd.DataFrame
    policy: LabelPolicy = field(default_factory=LabelPolicy)

    @cached_property
    def events(self) -> list[CbcEvent]:
        return [_row_to_event(row, bool(row["label"])) for _, row in self.table.iterrows()]

    @cached_property
    def stats(self) -> CohortStats:
        return CohortStats.of(self.table)

    def __len__(self) -> int:
        return len(self.table)

    @property
    def event_ids(self) -> np.ndarray:
        return self.table["event_id"].to_numpy()

    @property
    def labels(self) -> np.ndarray:
        return self.table["label"].to_numpy(dtype=bool)

    @property
    def times(self) -> np.ndarray:
        return self.table["t"].to_numpy(dtype="datetime64[ns]")

    def relabel(self, dataset: Dataset, policy: LabelPolicy) -> "Cohort":
        table = self.table.drop(columns=["label"]).copy()
        table["label"] = label_table(table, dataset.results.for_analyte(FERRITIN), policy)["label"].to_numpy()
        return Cohort(table[list(COHORT_COLUMNS)], policy)


def build_cohort(dataset: Dataset, study_window, policy: LabelPolicy = LabelPolicy()) -> Cohort:
    table = _event_table(dataset, study_window)
    if table.empty:
        raise EmptyCohort(f"no CBC results inside study window {study_window}")
    labels = label_table(table, dataset.results.for_analyte(FERRITIN), policy)
    table["label"] = labels["label"].to_numpy(dtype=bool)
    return Cohort(table[list(COHORT_COLUMNS)].reset_index(drop=True), policy)


def infer_study_window(dataset: Dataset) -> tuple[date, date]:
    """Span of dates that carry CBC results (used when no window is given)."""
    cbc = dataset.results.select(np.isin(dataset.results.analyte, CBC_CODES))
    if not len(cbc):
        raise EmptyCohort("dataset has no CBC results")
    return (pd.Timestamp(cbc.collected_at.min()).date(), pd.Timestamp(cbc.collected_at.max()).date())


# ---------------------------------------------------------------------------
# cohort.csv


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def write_cohort(cohort: Cohort, fh: TextIO) -> None:
    t = cohort.table
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COHORT_COLUMNS)
    stamps = format_timestamps(t["t"].to_numpy(dtype="datetime64[ns]"))
    cbc = [t[c].to_numpy(dtype=float) for c in CBC_CODES]
    for i, (eid, pid, lab, age, g) in enumerate(zip(t["event_id"], t["patient_id"], t["label"],
                                                     t["age_years"], t["gender"])):
        w.writerow([eid, pid, stamps[i], int(bool(lab)), repr(float(age)),
                    "M" if g == "male" else "F"] + [_fmt(col[i]) for col in cbc])


def read_cohort(fh: TextIO, policy: LabelPolicy | None = None) -> Cohort:
    frame = pd.read_csv(fh, dtype={"event_id": str, "patient_id": str, "t": str, "gender": str},
                        keep_default_na=False, na_values={c: [""] for c in CBC_CODES})
    missing = set(COHORT_COLUMNS) - set(frame.columns)
    if missing:
        raise IngestError(f"cohort file lacks columns {sorted(missing)}")
    frame["t"] = pd.to_datetime(frame["t"], format="ISO8601", utc=True).dt.tz_localize(None)
    frame["t"] = frame["t"].astype("datetime64[ns]")
    frame["label"] = frame["label"].astype(int).astype(bool)
    frame["gender"] = frame["gender"].map({"M": "male", "F": "female"})
    for c in CBC_CODES:
        frame[c] = frame[c].astype(float)
    frame["age_years"] = frame["age_years"].astype(float)
    return Cohort(frame[list(COHORT_COLUMNS)], policy or LabelPolicy())
