"""The eight hypothetical rule-based ferritin reflex protocols.

Each rule is a conjunction or disjunction of four atoms:

* ``low_hct``  - current HCT strictly below the gender-specific lower limit
* ``low_mcv``  - current MCV strictly below its lower limit
* ``high_rdw`` - current RDW strictly above its upper limit
* ``prior_ferritin`` - any ferritin collected in ``[t - 2 years, t)``

Missing CBC values make an atom unknown. A rule is decided with three-valued
logic: a conjunction with any false atom is false, a disjunction with any
true atom is true, otherwise unknown atoms leave the rule undecided and the
event is excluded from that rule's counts.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import timedelta

import numpy as np
import pandas as pd

from .catalog import Gender, ReferenceTable, reference_limit
from .cohort import Cohort
from .errors import MissingParameter, UndefinedRate
from .ingest import LabTable

PRIOR_FERRITIN_LOOKBACK = timedelta(days=730)


class RuleId(str, enum.Enum):
    LowHCT = "LowHCT"
    LowMCV = "LowMCV"
    PriorFerritin = "PriorFerritin"
    PriorFerritin_and_LowHCT = "PriorFerritin_and_LowHCT"
    LowMCV_and_HighRDW = "LowMCV_and_HighRDW"
    LowHCT_or_LowMCV = "LowHCT_or_LowMCV"
    PriorFerritin_and_LowMCV = "PriorFerritin_and_LowMCV"
    LowHCT_and_LowMCV_and_HighRDW = "LowHCT_and_LowMCV_and_HighRDW"


@dataclass(frozen=True)
class ReflexRule:
    id: RuleId
    op: str                    # "and" | "or"
    atoms: tuple[str, ...]
    label: str


RULES: dict[RuleId, ReflexRule] = {r.id: r for r in (
    ReflexRule(RuleId.LowHCT, "and", ("low_hct",), "Low HCT"),
    ReflexRule(RuleId.LowMCV, "and", ("low_mcv",), "Low MCV"),
    ReflexRule(RuleId.PriorFerritin, "and", ("prior_ferritin",), "Prior Ferritin"),
    ReflexRule(RuleId.PriorFerritin_and_LowHCT, "and", ("prior_ferritin", "low_hct"), "Prior Ferritin and Low HCT"),
    ReflexRule(RuleId.LowMCV_and_HighRDW, "and", ("low_mcv", "high_rdw"), "Low MCV and High RDW"),
    ReflexRule(RuleId.LowHCT_or_LowMCV, "or", ("low_hct", "low_mcv"), "Low HCT or MCV"),
    ReflexRule(RuleId.PriorFerritin_and_LowMCV, "and", ("prior_ferritin", "low_mcv"), "Prior Ferritin and Low MCV"),
    ReflexRule(RuleId.LowHCT_and_LowMCV_and_HighRDW, "and", ("low_hct", "low_mcv", "high_rdw"),
               "Low HCT and MCV, High RDW"),
)}


@dataclass(frozen=True)
class RuleContext:
    hct: float | None
    mcv: float | None
    rdw: float | None
    gender: Gender
    prior_ferritin: bool


def _atom(name: str, ctx: RuleContext, table: ReferenceTable | None) -> bool | None:
    if name == "prior_ferritin":
        return bool(ctx.prior_ferritin)
    code, value, side = {"low_hct": ("HCT", ctx.hct, "below"),
                         "low_mcv": ("MCV", ctx.mcv, "below"),
                         "high_rdw": ("RDW", ctx.rdw, "above")}[name]
    if value is None or value != value:
        return None
    rng = reference_limit(code, ctx.gender, table)
    return rng.below(value) if side == "below" else rng.above(value)


def evaluate_rule(rule: RuleId | ReflexRule | str, ctx: RuleContext, table: ReferenceTable | None = None) -> bool:
    """Whether ``rule`` fires for ``ctx``; :class:`MissingParameter` if undecidable."""
    rule = rule if isinstance(rule, ReflexRule) else RULES[RuleId(rule)]
    values = [_atom(a, ctx, table) for a in rule.atoms]
    if rule.op == "and":
        if any(v is False for v in values):
            return False
        if all(v is True for v in values):
            return True
    else:
        if any(v is True for v in values):
            return True
        if all(v is False for v in values):
            return False
    missing = [a for a, v in zip(rule.atoms, values) if v is None]
    raise MissingParameter(f"{rule.id.value}: cannot decide without {', '.join(missing)}")


# ---------------------------------------------------------------------------
# cohort-level evaluation


@dataclass(frozen=True)
class RuleInputs:
    """Column form of :class:`RuleContext` for a whole cohort."""

    hct: np.ndarray
    mcv: np.ndarray
    rdw: np.ndarray
    male: np.ndarray
    prior_ferritin: np.ndarray

    def __len__(self) -> int:
        return len(self.hct)

    def context(self, i: int) -> RuleContext:
        def opt(a):
            return None if np.isnan(a[i]) else float(a[i])
        return RuleContext(opt(self.hct), opt(self.mcv), opt(self.rdw),
                           Gender.MALE if self.male[i] else Gender.FEMALE, bool(self.prior_ferritin[i]))

    def subset(self, idx) -> "RuleInputs":
        return RuleInputs(self.hct[idx], self.mcv[idx], self.rdw[idx], self.male[idx], self.prior_ferritin[idx])


def prior_ferritin_flags(cohort: Cohort, ferritin: LabTable,
                         lookback: timedelta = PRIOR_FERRITIN_LOOKBACK) -> np.ndarray:
    """Any ferritin collected in ``[t - lookback, t)`` for each cohort event."""
    events = cohort.table[["patient_id", "t"]].reset_index()
    fer = ferritin.to_frame()
    if fer.empty or events.empty:
        return np.zeros(len(events), dtype=bool)
    right = fer[["patient_id", "collected_at"]].sort_values("collected_at", kind="stable")
    merged = pd.merge_asof(events.sort_values("t", kind="stable"), right, left_on="t",
                           right_on="collected_at", by="patient_id", direction="backward",
                           tolerance=pd.Timedelta(lookback), allow_exact_matches=False)
    return merged.set_index("index")["collected_at"].reindex(events["index"]).notna().to_numpy()


def rule_inputs(cohort: Cohort, ferritin: LabTable) -> RuleInputs:
    t = cohort.table
    return RuleInputs(
        t["HCT"].to_numpy(dtype=float), t["MCV"].to_numpy(dtype=float), t["RDW"].to_numpy(dtype=float),
        (t["gender"].to_numpy() == Gender.MALE.value), prior_ferritin_flags(cohort, ferritin),
    )


def _atom_arrays(name: str, inputs: RuleInputs, table: ReferenceTable | None):
    if name == "prior_ferritin":
        return inputs.prior_ferritin.astype(bool), np.ones(len(inputs), dtype=bool)
    code, values, side = {"low_hct": ("HCT", inputs.hct, "below"),
                          "low_mcv": ("MCV", inputs.mcv, "below"),
                          "high_rdw": ("RDW", inputs.rdw, "above")}[name]
    known = ~np.isnan(values)
    out = np.zeros(len(inputs), dtype=bool)
    for gender, sel in ((Gender.MALE, inputs.male), (Gender.FEMALE, ~inputs.male)):
        rng = reference_limit(code, gender, table)
        limit = rng.low if side == "below" else rng.high
        if limit is None:
            continue
        with np.errstate(invalid="ignore"):
            hit = values < limit if side == "below" else values > limit
        out |= sel & known & hit
    return out, known


def rule_fires(rule: RuleId | str, inputs: RuleInputs, table: ReferenceTable | None = None):
    """``(fires, decided)`` boolean arrays over the cohort."""
    rule = RULES[RuleId(rule)]
    parts = [_atom_arrays(a, inputs, table) for a in rule.atoms]
    true_known = [v & k for v, k in parts]
    false_known = [~v & k for v, k in parts]
    if rule.op == "and":
        fires = np.logical_and.reduce(true_known)
        negative = np.logical_or.reduce(false_known)
    else:
        fires = np.logical_or.reduce(true_known)
        negative = np.logical_and.reduce(false_known)
    return fires, fires | negative


@dataclass(frozen=True)
class RuleScore:
    rule_id: str
    sensitivity: float
    specificity: float
    wilson_ci_sens: tuple[float, float]
    wilson_ci_spec: tuple[float, float]
    tp: int
    fn: int
    tn: int
    fp: int
    n_excluded: int

    @property
    def n_pos(self) -> int:
        return self.tp + self.fn

    @property
    def n_neg(self) -> int:
        return self.tn + self.fp


def confusion_score(rule_id, fires, labels, decided=None, confidence: float = 0.95) -> RuleScore:
    """Sensitivity/specificity of a firing pattern against labels, with Wilson CIs."""
    from .evaluate.stats import wilson_ci   # evaluate imports this module
    fires = np.asarray(fires, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    decided = np.ones_like(fires) if decided is None else np.asarray(decided, dtype=bool)
    f, y = fires[decided], labels[decided]
    tp = int((f & y).sum())
    fn = int((~f & y).sum())
    tn = int((~f & ~y).sum())
    fp = int((f & ~y).sum())
    if tp + fn == 0:
        raise UndefinedRate(f"{rule_id}: sensitivity undefined without positive events")
    if tn + fp == 0:
        raise UndefinedRate(f"{rule_id}: specificity undefined without negative events")
    return RuleScore(getattr(rule_id, "value", rule_id), tp / (tp + fn), tn / (tn + fp),
                     wilson_ci(tp, tp + fn, confidence), wilson_ci(tn, tn + fp, confidence),
                     tp, fn, tn, fp, int((~decided).sum()))


def rule_confusion(rule: RuleId | str, labels, inputs: RuleInputs, table: ReferenceTable | None = None) -> RuleScore:
    fires, decided = rule_fires(rule, inputs, table)
    return confusion_score(RuleId(rule), fires, labels, decided)


def score_all_rules(labels, inputs: RuleInputs, table: ReferenceTable | None = None) -> list[RuleScore]:
    return [rule_confusion(r, labels, inputs, table) for r in RuleId]
