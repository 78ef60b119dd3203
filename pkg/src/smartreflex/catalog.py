"""Analyte catalog, reference limits and the patient/lab record types.

Every analyte carries one canonical unit and belongs to exactly one
analyte group. Values are never unit-converted.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path

from .errors import InvalidChronology, NoRangeConfigured


class Gender(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"
    ANY = "any"

    @classmethod
    def parse(cls, text: str) -> "Gender":
        key = text.strip().lower()
        aliases = {"m": cls.MALE, "male": cls.MALE, "f": cls.FEMALE, "female": cls.FEMALE,
                   "any": cls.ANY, "*": cls.ANY, "": cls.ANY}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown gender {text!r}") from None


class AnalyteGroup(str, enum.Enum):
    FERRITIN = "Ferritin"
    CBC = "CBC"
    ROUTINE_CHEMISTRY = "Routine Chemistry"
    COAGULATION = "Coagulation"
    HEMATOLOGY = "Hematology (non-routine CBC)"
    IRON = "Iron studies (besides ferritin)"
    LIPIDS = "Lipids"
    OTHER = "Other"


@dataclass(frozen=True)
class Analyte:
    code: str
    name: str
    unit: str
    group: AnalyteGroup


def _group(group, rows):
    return [Analyte(code, name, unit, group) for code, name, unit in rows]


_ANALYTES = (
    _group(AnalyteGroup.FERRITIN, [("FERRITIN", "Ferritin", "lab units")])
    + _group(AnalyteGroup.CBC, [
        ("HGB", "Hemoglobin", "g/dL"),
        ("HCT", "Hematocrit", "%"),
        ("PLT", "Platelet count", "10^3/uL"),
        ("MCV", "Mean cell volume", "fL"),
        ("MCH", "Mean cell hemoglobin", "pg"),
        ("MCHC", "Mean cell hemoglobin concentration", "g/dL"),
        ("RDW", "Red cell distribution width", "%"),
        ("RBC", "Red blood cell count", "10^6/uL"),
        ("WBC", "White blood cell count", "10^3/uL"),
    ])
    + _group(AnalyteGroup.ROUTINE_CHEMISTRY, [
        ("ALT", "Alanine transaminase", "U/L"),
        ("ALB", "Albumin", "g/dL"),
        ("ALKP", "Alkaline phosphatase", "U/L"),
        ("AGAP", "Anion gap", "mmol/L"),
        ("AST", "Aspartate transaminase", "U/L"),
        ("HCO3", "Bicarbonate", "mmol/L"),
        ("BUN", "Blood urea nitrogen", "mg/dL"),
        ("CA", "Calcium", "mg/dL"),
        ("CL", "Chloride", "mmol/L"),
        ("CREAT", "Creatinine", "mg/dL"),
        ("GLOB", "Globulin", "g/dL"),
        ("GLU", "Glucose", "mg/dL"),
        ("MG", "Magnesium", "mg/dL"),
        ("PHOS", "Phosphorus", "mg/dL"),
        ("K", "Potassium", "mmol/L"),
        ("NA", "Sodium", "mmol/L"),
        ("TBIL", "Total bilirubin", "mg/dL"),
        ("TP", "Total protein", "g/dL"),
    ])
    + _group(AnalyteGroup.COAGULATION, [
        ("APTT", "aPTT", "s"),
        ("DDIMER", "D-dimer", "ng/mL"),
        ("INR", "INR", "ratio"),
        ("PT", "PT", "s"),
    ])
    + _group(AnalyteGroup.HEMATOLOGY, [
        ("ABS_BASO", "Absolute basophil count", "10^3/uL"),
        ("ABS_EOS", "Absolute eosinophil count", "10^3/uL"),
        ("ABS_LYMPH", "Absolute lymphocyte count", "10^3/uL"),
        ("ABS_MONO", "Absolute monocyte count", "10^3/uL"),
        ("ABS_NEUT", "Absolute neutrophil count", "10^3/uL"),
        ("BANDS", "Bands", "%"),
        ("METAS", "Metas", "%"),
        ("MYELOS", "Myelos", "%"),
        ("PCT_BASO", "Percent basophils", "%"),
        ("PCT_EOS", "Percent eosinophils", "%"),
        ("PCT_LYMPH", "Percent lymphocytes", "%"),
        ("PCT_MONO", "Percent monocytes", "%"),
        ("PCT_NEUT", "Percent neutrophils", "%"),
        ("PCT_NRBC", "Percent nucleated RBCs", "%"),
        ("REACT_LYMPH", "Reactive lymphs", "%"),
        ("RETIC", "Retic", "%"),
        ("SCHISTO", "Schistocytes", "/hpf"),
    ])
    + _group(AnalyteGroup.IRON, [
        ("IRON", "Iron", "ug/dL"),
        ("TIBC", "Total iron-binding capacity", "ug/dL"),
    ])
    + _group(AnalyteGroup.LIPIDS, [
        ("CHOL", "Cholesterol", "mg/dL"),
        ("HDL", "HDL", "mg/dL"),
        ("LDL", "LDL", "mg/dL"),
        ("TRIG", "Triglycerides", "mg/dL"),
    ])
    + _group(AnalyteGroup.OTHER, [
        ("AMYLASE", "Amylase", "U/L"),
        ("B12", "B12", "pg/mL"),
        ("CRP", "CRP", "mg/L"),
        ("CEA", "CEA", "ng/mL"),
        ("CK", "Creatine kinase", "U/L"),
        ("DBIL", "Direct bilirubin", "mg/dL"),
        ("ESR", "ESR", "mm/h"),
        ("FOLATE", "Folic acid", "ng/mL"),
        ("FT4", "Free T4", "ng/dL"),
        ("LDH", "LDH", "U/L"),
        ("LIPASE", "Lipase", "U/L"),
        ("NTPROBNP", "NT-ProBNP", "pg/mL"),
        ("OSMO", "Osmolality", "mOsm/kg"),
        ("PTH", "PTH", "pg/mL"),
        ("LACTATE", "Lactic Acid", "mmol/L"),
        ("PSA", "PSA", "ng/mL"),
        ("TESTO", "Testosterone", "ng/dL"),
        # 4th generation assay only; 5th generation codes are not catalogued
        ("TROPT", "Troponin-T", "ng/mL"),
        ("TSH", "TSH", "uIU/mL"),
        ("URIC", "Uric acid", "mg/dL"),
        ("UTP", "Urine total protein", "mg/dL"),
        ("VITD", "Vitamin D", "ng/mL"),
    ])
)

CATALOG: dict[str, Analyte] = {a.code: a for a in _ANALYTES}
ANALYTE_CODES: tuple[str, ...] = tuple(CATALOG)
CBC_CODES: tuple[str, ...] = tuple(a.code for a in _ANALYTES if a.group is AnalyteGroup.CBC)
FERRITIN = "FERRITIN"


def is_cbc(code: str) -> bool:
    return code in CBC_CODES


def analyte(code: str) -> Analyte:
    try:
        return CATALOG[code]
    except KeyError:
        raise KeyError(f"analyte {code!r} is not in the catalog") from None


@dataclass(frozen=True)
class ReferenceRange:
    analyte: str
    gender: Gender
    low: float | None = None
    high: float | None = None

    def __post_init__(self):
        if self.low is not None and self.high is not None and not self.low < self.high:
            raise ValueError(f"{self.analyte}: low {self.low} must be below high {self.high}")

    def below(self, value: float) -> bool:
        return self.low is not None and value < self.low

    def above(self, value: float) -> bool:
        return self.high is not None and value > self.high


# Adult limits applied regardless of age.
DEFAULT_RANGES: tuple[ReferenceRange, ...] = (
    ReferenceRange("HCT", Gender.MALE, low=41.0),
    ReferenceRange("HCT", Gender.FEMALE, low=36.0),
    ReferenceRange("MCV", Gender.ANY, low=80.0),
    ReferenceRange("RDW", Gender.ANY, high=14.5),
    ReferenceRange("FERRITIN", Gender.FEMALE, low=10.0),
    ReferenceRange("FERRITIN", Gender.MALE, low=30.0),
)


class ReferenceTable:
    """Gender-resolved reference limits, keyed by analyte code."""

    def __init__(self, ranges=DEFAULT_RANGES):
        self._ranges: dict[tuple[str, Gender], ReferenceRange] = {}
        for r in ranges:
            self.add(r)

    def add(self, r: ReferenceRange) -> None:
        if r.analyte not in CATALOG:
            raise KeyError(f"analyte {r.analyte!r} is not in the catalog")
        if r.gender is Gender.ANY:
            self._ranges.pop((r.analyte, Gender.MALE), None)
            self._ranges.pop((r.analyte, Gender.FEMALE), None)
        self._ranges[(r.analyte, r.gender)] = r

    def lookup(self, analyte: str, gender: Gender | str) -> ReferenceRange:
        if not isinstance(gender, Gender):
            gender = Gender.parse(gender)
        for key in ((analyte, gender), (analyte, Gender.ANY)):
            if key in self._ranges:
                return self._ranges[key]
        raise NoRangeConfigured(f"no reference range configured for {analyte} ({gender.value})")

    def __iter__(self):
        return iter(self._ranges.values())

    @classmethod
    def from_csv(cls, path: str | Path, base=DEFAULT_RANGES) -> "ReferenceTable":
        """Defaults overridden by rows of an ``analyte,gender,low,high`` file."""
        table = cls(base)
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                low = float(row["low"]) if row.get("low", "").strip() else None
                high = float(row["high"]) if row.get("high", "").strip() else None
                table.add(ReferenceRange(row["analyte"].strip(), Gender.parse(row["gender"]), low, high))
        return table


DEFAULT_REFERENCE_TABLE = ReferenceTable()


def reference_limit(analyte: str, gender: Gender | str, table: ReferenceTable | None = None) -> ReferenceRange:
    """Reference range for ``analyte`` resolved for ``gender``.

    Gender-independent analytes resolve to the same range for both genders.
    Raises :class:`NoRangeConfigured` when nothing is configured.
    """
    return (table or DEFAULT_REFERENCE_TABLE).lookup(analyte, gender)


@dataclass(frozen=True)
class Patient:
    patient_id: str
    gender: Gender
    birth_date: date

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        if self.gender not in (Gender.MALE, Gender.FEMALE):
            raise ValueError("patient gender must be male or female")


@dataclass(frozen=True)
class LabResult:
    patient_id: str
    analyte: str
    value: float
    collected_at: datetime

    def __post_init__(self):
        if self.analyte not in CATALOG:
            raise KeyError(f"analyte {self.analyte!r} is not in the catalog")
        if not math.isfinite(self.value):
            raise ValueError("lab value must be finite")


DAYS_PER_YEAR = 365.25


def _as_datetime(at) -> datetime:
    if isinstance(at, datetime):
        return at if at.tzinfo else at.replace(tzinfo=timezone.utc)
    if isinstance(at, date):
        return datetime(at.year, at.month, at.day, tzinfo=timezone.utc)
    raise TypeError(f"expected date or datetime, got {type(at).__name__}")


def age_at(patient: Patient, at) -> float:
    """Age in fractional years (days / 365.25) at timestamp ``at``."""
    delta = _as_datetime(at) - _as_datetime(patient.birth_date)
    if delta.total_seconds() < 0:
        raise InvalidChronology(f"{patient.patient_id}: {at} precedes birth date {patient.birth_date}")
    return delta.total_seconds() / 86400.0 / DAYS_PER_YEAR
