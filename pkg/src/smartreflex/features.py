"""Predictor matrix: current CBC values, historical aggregates, imputation, scaling.

Raw feature rows carry NaN wherever a value must be imputed (a CBC
parameter with no result in the backfill window, or a value aggregate of an
analyte with no results in the history window). Imputation targets and
scaling moments come from :class:`ScalerStats`, which is fitted on training
rows only.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

import numba
import numpy as np
import pandas as pd

from .catalog import ANALYTE_CODES, CBC_CODES, Gender
from .cohort import CbcEvent, Cohort
from .errors import InsufficientData, SchemaVersionError
from .ingest import Dataset, to_utc_naive

SCHEMA_FORMAT = "smartreflex-features/1"
AGGREGATES = ("mean", "std", "count", "min", "max", "sum")
LOOKBACK = timedelta(days=730)
GAP = timedelta(days=30)


class AnchorMode(str, enum.Enum):
    PER_EVENT = "per_event"
    PER_PATIENT_FIRST_CBC = "per_patient_first_cbc"

    @classmethod
    def parse(cls, text: str) -> "AnchorMode":
        key = text.strip().lower().replace("-", "_")
        return {"per_event": cls.PER_EVENT, "per_patient": cls.PER_PATIENT_FIRST_CBC,
                "per_patient_first_cbc": cls.PER_PATIENT_FIRST_CBC}[key]


@dataclass(frozen=True)
class HistoryWindow:
    """History is read from ``anchor - lookback`` through ``t - gap`` inclusive."""

    lookback: timedelta = LOOKBACK
    gap: timedelta = GAP
    anchor_mode: AnchorMode = AnchorMode.PER_EVENT

    def __post_init__(self):
        object.__setattr__(self, "anchor_mode", AnchorMode(self.anchor_mode))
        if self.gap <= timedelta(0) or self.lookback <= self.gap:
            raise ValueError("history window must satisfy 0 < gap < lookback")


@dataclass(frozen=True)
class AggregateSet:
    mean: float
    std: float
    count: int
    min: float
    max: float
    sum: float

    @property
    def to_impute(self) -> bool:
        return self.count == 0


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class FeatureSchema:
    history_analytes: tuple[str, ...]
    include_std: bool = True
    names: tuple[str, ...] = field(init=False)
    version: str = field(init=False)

    def __post_init__(self):
        unknown = set(self.history_analytes) - set(ANALYTE_CODES)
        if unknown:
            raise KeyError(f"not in catalog: {sorted(unknown)}")
        order = {c: i for i, c in enumerate(ANALYTE_CODES)}
        analytes = tuple(sorted(set(self.history_analytes), key=order.__getitem__))
        object.__setattr__(self, "history_analytes", analytes)
        names = ["age", "gender_male", *CBC_CODES]
        for code in analytes:
            names.extend(f"{code}_prior_{stat}" for stat in self.stats)
        object.__setattr__(self, "names", tuple(names))
        digest = hashlib.sha1("\n".join(names).encode()).hexdigest()[:12]
        object.__setattr__(self, "version", f"{SCHEMA_FORMAT}:{digest}")

    @property
    def stats(self) -> tuple[str, ...]:
        return AGGREGATES if self.include_std else tuple(s for s in AGGREGATES if s != "std")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def history_columns(self, code: str) -> dict[str, int]:
        base = 2 + len(CBC_CODES) + self.history_analytes.index(code) * len(self.stats)
        return {stat: base + i for i, stat in enumerate(self.stats)}

    @classmethod
    def for_dataset(cls, dataset: Dataset, include_std: bool = True) -> "FeatureSchema":
        """History features for every catalogued analyte that occurs in the data."""
        present = set(np.unique(dataset.results.analyte)) if len(dataset.results) else set()
        return cls(tuple(c for c in ANALYTE_CODES if c in present), include_std)

    @classmethod
    def full(cls, include_std: bool = True) -> "FeatureSchema":
        return cls(ANALYTE_CODES, include_std)

    def to_dict(self) -> dict:
        return {"version": self.version, "history_analytes": list(self.history_analytes),
                "include_std": self.include_std, "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        schema = cls(tuple(d["history_analytes"]), bool(d["include_std"]))
        if d.get("version", schema.version) != schema.version or list(d.get("names", schema.names)) != list(schema.names):
            raise SchemaVersionError(f"unrecognised feature schema {d.get('version')!r}")
        return schema

    def check(self, version: str) -> None:
        if version != self.version:
            raise SchemaVersionError(f"feature schema {version!r} does not match {self.version!r}")


@dataclass(frozen=True)
class FeatureVector:
    schema_version: str
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


# ---------------------------------------------------------------------------
# aggregation


def historical_aggregates(values, times, start, end) -> AggregateSet:
    """Aggregate one analyte's results collected in ``[start, end]``.

    ``std`` is the sample (n - 1) standard deviation and 0 when fewer than two
    values fall in the window. With no values, ``count`` is 0 and the value
    aggregates are NaN (to be imputed).
    """
    v = np.asarray(values, dtype=np.float64)
    t = np.asarray([to_utc_naive(x) for x in times], dtype="datetime64[ns]") if len(v) else np.array([], "datetime64[ns]")
    sel = v[(t >= to_utc_naive(start)) & (t <= to_utc_naive(end))]
    n = len(sel)
    if n == 0:
        nan = float("nan")
        return AggregateSet(nan, 0.0, 0, nan, nan, nan)
    std = float(np.std(sel, ddof=1)) if n > 1 else 0.0
    return AggregateSet(float(sel.sum() / n), std, n, float(sel.min()), float(sel.max()), float(sel.sum()))


@numba.njit(cache=True, nogil=True)
def _window_stats(times, values, pstart, pend, ev_patient, ev_lo, ev_hi, out, cols):
    # cols: target column per stat (mean, std, count, min, max, sum); -1 = skip
    for e in range(len(ev_patient)):
        p = ev_patient[e]
        s = pstart[p]
        f = pend[p]
        lo = s + np.searchsorted(times[s:f], ev_lo[e], side="left")
        hi = s + np.searchsorted(times[s:f], ev_hi[e], side="right")
        n = hi - lo
        if n <= 0:
            mean = np.nan
            std = 0.0
            mn = np.nan
            mx = np.nan
            tot = np.nan
            n = 0
        else:
            tot = 0.0
            mn = values[lo]
            mx = values[lo]
            for i in range(lo, hi):
                x = values[i]
                tot += x
                if x < mn:
                    mn = x
                if x > mx:
                    mx = x
            mean = tot / n
            std = 0.0
            if n > 1:
                ss = 0.0
                for i in range(lo, hi):
                    d = values[i] - mean
                    ss += d * d
                std = np.sqrt(ss / (n - 1))
        stats = (mean, std, float(n), mn, mx, tot)
        for k in range(6):
            if cols[k] >= 0:
                out[e, cols[k]] = stats[k]


def resolve_windows(cohort: Cohort, window: HistoryWindow = HistoryWindow()) -> tuple[np.ndarray, np.ndarray]:
    """Per-event history bounds ``(start, end)`` as datetime64[ns] arrays."""
    t = cohort.times
    if window.anchor_mode is AnchorMode.PER_EVENT:
        anchor = t
    else:
        anchor = cohort.table.groupby("patient_id")["t"].transform("min").to_numpy(dtype="datetime64[ns]")
    return anchor - np.timedelta64(window.lookback), t - np.timedelta64(window.gap)


def resolve_window(event: CbcEvent, cohort: Cohort, mode: AnchorMode | str = AnchorMode.PER_EVENT,
                   window: HistoryWindow | None = None):
    """History bounds for one event of ``cohort`` as aware datetimes."""
    window = window or HistoryWindow(anchor_mode=AnchorMode(mode))
    t = event.t
    if window.anchor_mode is AnchorMode.PER_EVENT:
        anchor = t
    else:
        mine = cohort.table.loc[cohort.table["patient_id"] == event.patient_id, "t"]
        anchor = min(t, pd.Timestamp(mine.min()).tz_localize("UTC").to_pydatetime())
    return anchor - window.lookback, t - window.gap


def feature_matrix(cohort: Cohort, dataset: Dataset, schema: FeatureSchema,
                   window: HistoryWindow = HistoryWindow()) -> np.ndarray:
    """Raw (unimputed, unscaled) feature rows aligned with ``cohort.table``."""
    table = cohort.table
    n = len(table)
    X = np.full((n, len(schema)), np.nan)
    X[:, 0] = table["age_years"].to_numpy(dtype=float)
    X[:, 1] = (table["gender"].to_numpy() == Gender.MALE.value).astype(float)
    for j, code in enumerate(CBC_CODES):
        X[:, 2 + j] = table[code].to_numpy(dtype=float)

    res = dataset.results
    categories = np.unique(np.concatenate([np.asarray(res.patient_id, dtype=object),
                                           table["patient_id"].to_numpy(dtype=object)]))
    lab_codes = pd.Categorical(res.patient_id, categories=categories).codes.astype(np.int64)
    ev_codes = pd.Categorical(table["patient_id"], categories=categories).codes.astype(np.int64)
    lo, hi = resolve_windows(cohort, window)
    lo, hi = lo.view(np.int64), hi.view(np.int64)
    all_times = res.collected_at.view(np.int64)
    for code in schema.history_analytes:
        mask = res.analyte == code
        pc = lab_codes[mask]
        times = np.ascontiguousarray(all_times[mask])
        values = np.ascontiguousarray(res.value[mask])
        idx = np.arange(len(categories))
        pstart = np.searchsorted(pc, idx, side="left")
        pend = np.searchsorted(pc, idx, side="right")
        target = schema.history_columns(code)
        cols = np.array([target.get(s, -1) for s in AGGREGATES], dtype=np.int64)
        _window_stats(times, values, pstart, pend, ev_codes, lo, hi, X, cols)
    return X


def assemble_features(event: CbcEvent, dataset: Dataset, cohort: Cohort, schema: FeatureSchema,
                      scaler: "ScalerStats | None" = None,
                      window: HistoryWindow = HistoryWindow()) -> FeatureVector:
    """Feature row for a single event, scaled when ``scaler`` is given.

    Non-CBC results later than ``t - 30 days`` are never read; CBC values
    come from the event's own (backfilled) panel.
    """
    values = np.full(len(schema), np.nan)
    values[0] = event.age_years
    values[1] = 1.0 if event.gender is Gender.MALE else 0.0
    for j, code in enumerate(CBC_CODES):
        v = event.cbc_values.get(code)
        values[2 + j] = np.nan if v is None else v
    start, end = resolve_window(event, cohort, window=window)
    res = dataset.results
    mine = res.patient_id == event.patient_id
    for code in schema.history_analytes:
        sel = mine & (res.analyte == code)
        agg = historical_aggregates(res.value[sel], res.collected_at[sel], start, end)
        for stat, col in schema.history_columns(code).items():
            values[col] = float(getattr(agg, stat))
    if scaler is not None:
        scaler.check(schema)
        values = scaler.transform(values[None, :])[0]
    return FeatureVector(schema.version, values)


# ---------------------------------------------------------------------------
# imputation and scaling


@dataclass(frozen=True)
class ScalerStats:
    schema_version: str
    impute: np.ndarray   # per feature: replacement for NaN
    mean: np.ndarray
    std: np.ndarray      # population form; 0 marks a constant feature

    def check(self, schema: FeatureSchema) -> None:
        schema.check(self.schema_version)

    def fill(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.impute[cols]
        return X

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = self.fill(X)
        safe = np.where(self.std > 0, self.std, 1.0)
        Z = (X - self.mean) / safe
        Z[:, self.std == 0] = 0.0
        return Z

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "impute": self.impute.tolist(),
                "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerStats":
        return cls(d["schema_version"], np.asarray(d["impute"], dtype=float),
                   np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_scaler(raw_rows: np.ndarray, schema: FeatureSchema, *, scale: bool = True) -> ScalerStats:
    """Fit imputation targets and standardisation moments on training rows.

    Count-0 history aggregates are imputed to the pooled mean of that
    analyte's measured values over the training rows; a still-missing
    current CBC value to the training mean of that parameter. With
    ``scale=False`` the returned stats impute but leave values unscaled.
    """
    X = np.asarray(raw_rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientData("at least two training rows are needed to fit a scaler")
    if X.shape[1] != len(schema):
        raise SchemaVersionError(f"rows have {X.shape[1]} columns, schema has {len(schema)}")
    impute = np.zeros(len(schema))
    for j in range(2, 2 + len(CBC_CODES)):
        col = X[:, j]
        present = col[~np.isnan(col)]
        impute[j] = present.mean() if len(present) else 0.0
    for code in schema.history_analytes:
        c = schema.history_columns(code)
        counts = X[:, c["count"]]
        seen = counts > 0
        total = counts[seen].sum()
        pop = X[seen, c["sum"]].sum() / total if total > 0 else 0.0
        for stat in ("mean", "min", "max", "sum"):
            impute[c[stat]] = pop
    filled = X.copy()
    rows, cols = np.nonzero(np.isnan(filled))
    filled[rows, cols] = impute[cols]
    if scale:
        mean = filled.mean(axis=0)
        std = filled.std(axis=0)
        # float noise on a constant column must not turn into unit variance
        std[std <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 0.0
    else:
        mean, std = np.zeros(len(schema)), np.ones(len(schema))
    return ScalerStats(schema.version, impute, mean, std)


# ---------------------------------------------------------------------------
# features directory


def save_features(directory, cohort: Cohort, X: np.ndarray, schema: FeatureSchema,
                  window: HistoryWindow) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "features.npy", X, allow_pickle=False)
    t = cohort.table
    pd.DataFrame({"event_id": t["event_id"], "patient_id": t["patient_id"],
                  "label": t["label"].astype(int)}).to_csv(d / "events.csv", index=False, lineterminator="\n")
    sidecar = {
        "schema": schema.to_dict(),
        "window": {"lookback_days": window.lookback.days, "gap_days": window.gap.days,
                   "anchor_mode": window.anchor_mode.value},
        "scaler": None,
        "n_rows": int(X.shape[0]),
    }
    (d / "schema.json").write_text(json.dumps(sidecar, indent=1) + "\n")


@dataclass(frozen=True)
class FeatureSet:
    X: np.ndarray
    event_ids: np.ndarray
    patient_ids: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema


def load_features(directory) -> FeatureSet:
    d = Path(directory)
    sidecar = json.loads((d / "schema.json").read_text())
    schema = FeatureSchema.from_dict(sidecar["schema"])
    X = np.load(d / "features.npy", allow_pickle=False)
    ev = pd.read_csv(d / "events.csv", dtype={"event_id": str, "patient_id": str})
    if X.shape != (len(ev), len(schema)):
        raise SchemaVersionError(f"feature matrix shape {X.shape} does not match sidecar")
    return FeatureSet(X, ev["event_id"].to_numpy(), ev["patient_id"].to_numpy(),
                      ev["label"].to_numpy().astype(bool), schema)
