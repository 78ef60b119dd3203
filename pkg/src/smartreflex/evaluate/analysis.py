"""Cross-run event probabilities and the analyses built on them."""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..catalog import FERRITIN, Gender, ReferenceTable, reference_limit
from ..errors import InsufficientData
from ..rules import RuleId, RuleInputs, RuleScore, confusion_score, rule_fires
from .metrics import roc_curve
from .stats import spearman_rho, wilson_ci

RANDOM_RATES = tuple(np.round(np.arange(1, 10) / 10, 1))


@dataclass(frozen=True)
class EventProbability:
    event_id: str
    probabilities: dict[int, float]   # run -> probability, for runs where the event was in test

    @property
    def mean_prob(self) -> float:
        return float(np.mean(list(self.probabilities.values())))

    @property
    def median_prob(self) -> float:
        return float(np.median(list(self.probabilities.values())))


def event_probabilities(predictions: pd.DataFrame, runs=None) -> pd.DataFrame:
    """Per-event ``n_runs``, ``mean_prob`` and ``median_prob`` from ``run,event_id,prob`` rows.

    ``runs`` restricts which runs contribute. Rows come back sorted by event id.
    """
    p = predictions if runs is None else predictions[predictions["run"].isin(list(runs))]
    g = p.groupby("event_id", sort=True)["prob"]
    out = pd.DataFrame({"n_runs": g.size(), "mean_prob": g.mean(), "median_prob": g.median()})
    return out.reset_index()


def event_probability_objects(predictions: pd.DataFrame, runs=None) -> list[EventProbability]:
    p = predictions if runs is None else predictions[predictions["run"].isin(list(runs))]
    return [EventProbability(eid, dict(zip(grp["run"].astype(int), grp["prob"].astype(float))))
            for eid, grp in p.groupby("event_id", sort=True)]


# ---------------------------------------------------------------------------
# rules vs model


def sensitivity_at_fpr(roc_points: np.ndarray, fpr: float) -> float:
    """Model TPR at a given FPR, linear between ROC vertices (top of any vertical run)."""
    x, y = roc_points[:, 0], roc_points[:, 1]
    i = int(np.searchsorted(x, fpr, side="right")) - 1
    if i >= len(x) - 1:
        return float(y[-1])
    span = x[i + 1] - x[i]
    return float(y[i] + (fpr - x[i]) / span * (y[i + 1] - y[i])) if span > 0 else float(y[i])


def fpr_at_sensitivity(roc_points: np.ndarray, tpr: float) -> float:
    """Smallest FPR at which the model reaches a given TPR, linear between vertices."""
    x, y = roc_points[:, 0], roc_points[:, 1]
    i = int(np.searchsorted(y, tpr, side="left"))
    if i == 0:
        return float(x[0])
    if i >= len(y):
        return 1.0
    span = y[i] - y[i - 1]
    return float(x[i - 1] + (tpr - y[i - 1]) / span * (x[i] - x[i - 1])) if span > 0 else float(x[i])


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    series: str                 # "rule" | "random"
    score: RuleScore
    model_sensitivity_at_specificity: float
    model_specificity_at_sensitivity: float

    @property
    def model_dominates(self) -> bool:
        return self.model_sensitivity_at_specificity >= self.score.sensitivity

    @property
    def on_diagonal(self) -> bool:
        """Whether the point's confidence box touches the chance line tpr = fpr."""
        lo, hi = self.score.wilson_ci_sens
        slo, shi = self.score.wilson_ci_spec
        return max(lo, 1.0 - shi) <= min(hi, 1.0 - slo)


@dataclass
class RuleComparison:
    roc_points: np.ndarray
    auroc: float
    rows: list[ComparisonRow]
    n_events: int

    def rule_rows(self) -> list[ComparisonRow]:
        return [r for r in self.rows if r.series == "rule"]

    def random_rows(self) -> list[ComparisonRow]:
        return [r for r in self.rows if r.series == "random"]

    def to_frame(self) -> pd.DataFrame:
        recs = [{"series": "model", "name": "model", "fpr": float(x), "tpr": float(y)} for x, y in self.roc_points]
        for r in self.rows:
            s = r.score
            recs.append({"series": r.series, "name": r.name, "fpr": 1.0 - s.specificity, "tpr": s.sensitivity,
                         "sens_ci_low": s.wilson_ci_sens[0], "sens_ci_high": s.wilson_ci_sens[1],
                         "spec_ci_low": s.wilson_ci_spec[0], "spec_ci_high": s.wilson_ci_spec[1],
                         "n_excluded": s.n_excluded,
                         "model_sens_at_spec": r.model_sensitivity_at_specificity,
                         "model_spec_at_sens": r.model_specificity_at_sensitivity})
        cols = ["series", "name", "fpr", "tpr", "sens_ci_low", "sens_ci_high", "spec_ci_low", "spec_ci_high",
                "n_excluded", "model_sens_at_spec", "model_spec_at_sens"]
        return pd.DataFrame(recs, columns=cols)


def _row(name, series, score: RuleScore, roc) -> ComparisonRow:
    return ComparisonRow(name, series, score, sensitivity_at_fpr(roc, 1.0 - score.specificity),
                         1.0 - fpr_at_sensitivity(roc, score.sensitivity))


def compare_rules_vs_model(labels, mean_probs, inputs: RuleInputs, table: ReferenceTable | None = None, *,
                           seed: int = 0, random_rates=RANDOM_RATES) -> RuleComparison:
    """Score all rules and random reflex controls against the model ROC on the same events.

    ``labels``, ``mean_probs`` and ``inputs`` must be aligned (one entry per
    event that received at least one test-partition probability).
    """
    labels = np.asarray(labels, dtype=bool)
    probs = np.asarray(mean_probs, dtype=float)
    roc, auroc = roc_curve(probs, labels)
    rows = []
    for rule_id in RuleId:
        fires, decided = rule_fires(rule_id, inputs, table)
        rows.append(_row(rule_id.value, "rule", confusion_score(rule_id, fires, labels, decided), roc))
    rng = np.random.default_rng([seed, 0xF164])
    draws = rng.random(len(labels))
    for rate in random_rates:
        name = f"Random_{rate:.1f}"
        rows.append(_row(name, "random", confusion_score(name, draws < rate, labels), roc))
    return RuleComparison(roc, auroc, rows, len(labels))


# ---------------------------------------------------------------------------
# missing-not-at-random check


@dataclass(frozen=True)
class DecileRow:
    decile: int
    n: int
    n_low: int
    proportion: float
    ci_low: float
    ci_high: float
    prob_min: float
    prob_max: float


@dataclass
class DecileAnalysis:
    rows: list[DecileRow]
    rho: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows])


def low_ferritin(values, male, table: ReferenceTable | None = None) -> np.ndarray:
    """Ferritin values strictly below the gender-specific lower limit."""
    values = np.asarray(values, dtype=float)
    male = np.asarray(male, dtype=bool)
    cut = np.where(male, reference_limit(FERRITIN, Gender.MALE, table).low,
                   reference_limit(FERRITIN, Gender.FEMALE, table).low)
    return values < cut


def mnar_decile_analysis(event_ids, median_probs, ferritin_values, male, table: ReferenceTable | None = None,
                         n_groups: int = 10, confidence: float = 0.95) -> DecileAnalysis:
    """Proportion of low ferritin per decile of predicted probability, among ordered events.

    Events are ranked by ``(median_prob, event_id)`` and cut into ``n_groups``
    groups as equal as possible. Spearman rho is taken between the group
    index and the low proportion.
    """
    ids = np.asarray(event_ids, dtype=object)
    probs = np.asarray(median_probs, dtype=float)
    values = np.asarray(ferritin_values, dtype=float)
    keep = ~np.isnan(values)
    ids, probs, values, male = ids[keep], probs[keep], values[keep], np.asarray(male, dtype=bool)[keep]
    if len(ids) < n_groups:
        raise InsufficientData(f"need at least {n_groups} ordered events with ferritin results, got {len(ids)}")
    order = np.lexsort((ids, probs))
    low = low_ferritin(values, male, table)
    rows = []
    for d, idx in enumerate(np.array_split(order, n_groups), start=1):
        k, n = int(low[idx].sum()), len(idx)
        lo, hi = wilson_ci(k, n, confidence)
        rows.append(DecileRow(d, n, k, k / n, lo, hi, float(probs[idx].min()), float(probs[idx].max())))
    rho = spearman_rho([r.decile for r in rows], [r.proportion for r in rows])
    return DecileAnalysis(rows, rho)


# ---------------------------------------------------------------------------
# manual review queue


@dataclass
class ReviewQueue:
    ordered_low: pd.DataFrame        # event_id, median_prob: ferritin ordered, lowest probabilities
    not_ordered_high: pd.DataFrame   # ferritin not ordered, highest probabilities
    sample_ordered: pd.DataFrame
    sample_not_ordered: pd.DataFrame
    ordered_cutoff: float            # every selected ordered case is at or below this
    not_ordered_cutoff: float        # every selected not-ordered case is at or above this
    notes: list[str] = field(default_factory=list)

    def describe(self) -> str:
        return (f"ordered cases: predicted probability of ordering was {self.ordered_cutoff:.1%} or less; "
                f"not-ordered cases: {self.not_ordered_cutoff:.1%} or greater")

    def to_frame(self) -> pd.DataFrame:
        parts = []
        for group, frame in (("ordered_low", self.sample_ordered), ("not_ordered_high", self.sample_not_ordered)):
            parts.append(frame.assign(group=group)[["group", "event_id", "median_prob"]])
        return pd.concat(parts, ignore_index=True)


def review_queue(labels: pd.Series | pd.DataFrame, predictions: pd.DataFrame, *, k: int = 200, m: int = 20,
                 runs_considered: int = 3, seed: int = 0) -> ReviewQueue:
    """Least-expected orders and most-expected non-orders, with a uniform sample of each.

    ``labels`` maps event_id to the ferritin-ordered label (a Series indexed
    by event id, or a frame with ``event_id`` and ``label`` columns).
    Only the first ``runs_considered`` runs are used, and an event's score is
    its median probability over those runs in which it was in the test set.
    """
    if isinstance(labels, pd.DataFrame):
        labels = labels.set_index("event_id")["label"]
    runs = sorted(predictions["run"].unique())[:runs_considered]
    ev = event_probabilities(predictions, runs)
    ev["label"] = labels.reindex(ev["event_id"]).to_numpy()
    if ev["label"].isna().any():
        raise KeyError("predictions reference events without labels")
    ev["label"] = ev["label"].astype(bool)
    pos = ev[ev["label"]].sort_values(["median_prob", "event_id"], kind="stable")
    neg = ev[~ev["label"]].assign(_neg=lambda f: -f["median_prob"]).sort_values(["_neg", "event_id"], kind="stable")
    notes = []
    for name, frame in (("ordered", pos), ("not ordered", neg)):
        if len(frame) < k:
            msg = f"only {len(frame)} {name} events qualify; queue truncated below k={k}"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
    low = pos.head(k)[["event_id", "median_prob"]].reset_index(drop=True)
    high = neg.head(k)[["event_id", "median_prob"]].reset_index(drop=True)
    rng = np.random.default_rng([seed, 0x4E71])

    def sample(frame):
        idx = np.sort(rng.choice(len(frame), size=min(m, len(frame)), replace=False))
        return frame.iloc[idx].reset_index(drop=True)

    return ReviewQueue(low, high, sample(low), sample(high),
                       float(low["median_prob"].max()) if len(low) else float("nan"),
                       float(high["median_prob"].min()) if len(high) else float("nan"), notes)


# ---------------------------------------------------------------------------
# reflex decisions


class ReflexMode(str, enum.Enum):
    VARIATION1_CANCEL = "variation1_cancel"
    VARIATION2_ADD = "variation2_add"

    @classmethod
    def parse(cls, text) -> "ReflexMode":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        aliases = {"variation1": cls.VARIATION1_CANCEL, "cancel": cls.VARIATION1_CANCEL,
                   "variation2": cls.VARIATION2_ADD, "add": cls.VARIATION2_ADD}
        return aliases[key] if key in aliases else cls(key)


DEFAULT_THRESHOLDS = {ReflexMode.VARIATION1_CANCEL: 0.05, ReflexMode.VARIATION2_ADD: 0.52}


class Action(str, enum.Enum):
    ADD_FERRITIN = "ADD_FERRITIN"
    CANCEL_FERRITIN = "CANCEL_FERRITIN"
    NO_ACTION = "NO_ACTION"


@dataclass(frozen=True)
class OperatingPoint:
    mode: ReflexMode
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "mode", ReflexMode.parse(self.mode))
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")

    @classmethod
    def default(cls, mode) -> "OperatingPoint":
        mode = ReflexMode.parse(mode)
        return cls(mode, DEFAULT_THRESHOLDS[mode])


@dataclass(frozen=True)
class ReflexDecision:
    action: Action
    probability: float
    operating_point: OperatingPoint

    def to_dict(self) -> dict:
        return {"action": self.action.value, "probability": self.probability,
                "mode": self.operating_point.mode.value, "threshold": self.operating_point.threshold}


def reflex_decide(probability: float, op: OperatingPoint, clinician_ordered_reflex: bool | None = None) -> ReflexDecision:
    """Cancel a pre-ordered reflex ferritin below the threshold, or add one at/above it.

    ``clinician_ordered_reflex`` defaults to the situation each mode is
    designed for (pre-ordered for cancel, CBC only for add). Cancelling needs
    an order to cancel, and adding is moot when one is already placed.
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {probability}")
    cancel_mode = op.mode is ReflexMode.VARIATION1_CANCEL
    pre_ordered = cancel_mode if clinician_ordered_reflex is None else bool(clinician_ordered_reflex)
    action = Action.NO_ACTION
    if cancel_mode and pre_ordered and probability < op.threshold:
        action = Action.CANCEL_FERRITIN
    elif not cancel_mode and not pre_ordered and probability >= op.threshold:
        action = Action.ADD_FERRITIN
    return ReflexDecision(action, float(probability), op)
