"""Synthetic patients, lab histories and clinician ferritin ordering.

Each patient carries a latent iron-deficiency state that lowers HCT and MCV
and raises RDW. At every CBC the clinician orders a ferritin with a known
probability (the ground truth): a logistic function of hinge-shaped CBC
abnormalities, the number of ferritins drawn in the history window
``[t - 730d, t - 30d]``, and age. The intercept is calibrated by bisection
so the realised ordering rate hits a target. Ordered ferritin values are low
with a probability that can be coupled to the ordering probability
(missing-not-at-random) or held constant (``mcar_mode``).
"""
from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .catalog import CBC_CODES, DAYS_PER_YEAR, FERRITIN, Gender, Patient, reference_limit
from .cohort import event_ids
from .errors import CalibrationFailure, ConfigError
from .evaluate.metrics import roc_auc
from .ingest import LabTable, write_labs, write_patients

DAY = 86_400
EPOCH = np.datetime64("1970-01-01T00:00:00", "s")
NEVER = np.iinfo(np.int64).min // 4

# population norms the ordering function measures abnormality against
HCT_NORM = {"male": (44.5, 3.5), "female": (39.5, 3.0)}
MCV_NORM = (90.0, 5.0)
RDW_NORM = (13.3, 1.0)

# code: (mean, sd, decimals, shift when iron deficient)
OTHER_ANALYTES = {
    "NA": (140.0, 2.5, 0, 0.0),
    "K": (4.2, 0.4, 1, 0.0),
    "CREAT": (0.9, 0.25, 2, 0.0),
    "GLU": (100.0, 20.0, 0, 0.0),
    "ALB": (4.2, 0.35, 1, 0.0),
    "IRON": (90.0, 30.0, 0, -40.0),
    "TIBC": (320.0, 50.0, 0, 60.0),
    "B12": (500.0, 150.0, 0, 0.0),
}


@dataclass
class SynthConfig:
    n_patients: int = 47_600
    study_start: date = date(2019, 1, 1)
    study_end: date = date(2019, 12, 31)
    events_per_patient_mean: float = 2.1     # 1 + Poisson(mean - 1), capped
    max_events_per_patient: int = 10
    min_event_gap_days: int = 35
    history_years: float = 3.0
    target_rate: float = 0.122
    calibration_tol: float = 0.002
    coef_low_hct: float = 0.3
    coef_low_mcv: float = 0.35
    coef_high_rdw: float = 0.25
    coef_prior_ferritin: float = 1.5          # per ferritin already on file in the window
    coef_age: float = 0.15                    # per 20 years from age 50
    deficiency_prevalence: float = 0.15
    male_fraction: float = 0.45
    prior_cbc_panels_mean: float = 1.5
    prior_ferritin_mean_deficient: float = 0.8
    prior_ferritin_mean_replete: float = 0.2
    other_analyte_mean: float = 0.7
    mnar_strength: float = 1.0
    low_ferritin_base: float = -1.2
    low_ferritin_deficiency: float = 1.5
    mcar_mode: bool = False
    mcar_low_rate: float = 0.25
    pre_cbc_fraction: float = 0.002
    seed: int = 0

    def __post_init__(self):
        for name in ("target_rate", "deficiency_prevalence", "male_fraction", "mcar_low_rate", "pre_cbc_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not np.isfinite(v):
                raise ConfigError(f"{f.name} must be finite")
        if self.n_patients < 1 or self.events_per_patient_mean < 1:
            raise ConfigError("need at least one patient and one event per patient")
        if self.study_end < self.study_start:
            raise ConfigError("study_end precedes study_start")

    @classmethod
    def from_mapping(cls, values) -> "SynthConfig":
        """Build from string values (e.g. an INI section); unknown keys are errors."""
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown synth setting {key!r}")
            default = known[key].default
            try:
                if isinstance(default, bool):
                    kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    kwargs[key] = int(raw)
                elif isinstance(default, float):
                    kwargs[key] = float(raw)
                elif isinstance(default, date):
                    kwargs[key] = date.fromisoformat(str(raw).strip())
                else:
                    kwargs[key] = raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, section: str = "synth") -> "SynthConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
        return cls.from_mapping(dict(parser[section]) if parser.has_section(section) else {})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["study_start"] = self.study_start.isoformat()
        d["study_end"] = self.study_end.isoformat()
        return d


@dataclass
class GroundTruth:
    events: pd.DataFrame      # event_id, patient_id, true_prob, iron_deficient, pre_cbc_ferritin, ordered
    patients: pd.DataFrame    # patient_id and latent physiology
    metadata: dict = field(default_factory=dict)

    def write(self, directory) -> None:
        d = Path(directory)
        cols = ["event_id", "true_prob", "iron_deficient", "pre_cbc_ferritin"]
        out = self.events[cols].copy()
        out["iron_deficient"] = out["iron_deficient"].astype(int)
        out["pre_cbc_ferritin"] = out["pre_cbc_ferritin"].astype(int)
        out.sort_values("event_id").to_csv(d / "truth.csv", index=False, lineterminator="\n", float_format="%.10g")
        self.patients.to_csv(d / "truth_patients.csv", index=False, lineterminator="\n", float_format="%.10g")
        (d / "truth_meta.json").write_text(json.dumps(self.metadata, indent=1, sort_keys=True) + "\n")

    @classmethod
    def read(cls, directory) -> "GroundTruth":
        d = Path(directory)
        ev = pd.read_csv(d / "truth.csv", dtype={"event_id": str})
        ev["iron_deficient"] = ev["iron_deficient"].astype(bool)
        ev["pre_cbc_ferritin"] = ev["pre_cbc_ferritin"].astype(bool)
        pts = pd.read_csv(d / "truth_patients.csv", dtype={"patient_id": str})
        meta = json.loads((d / "truth_meta.json").read_text())
        return cls(ev, pts, meta)

    def aligned(self, ids) -> pd.DataFrame:
        """Truth rows in the order of ``ids`` (event ids)."""
        return self.events.set_index("event_id").loc[list(ids)].reset_index()


@dataclass
class SynthData:
    patients: list[Patient]
    labs: LabTable
    truth: GroundTruth
    config: SynthConfig


def bayes_auc(truth: GroundTruth | np.ndarray, labels) -> float:
    """auROC of the true ordering probabilities: the ceiling for any learner."""
    probs = truth.events["true_prob"].to_numpy() if isinstance(truth, GroundTruth) else np.asarray(truth)
    return roc_auc(probs, labels)


# ---------------------------------------------------------------------------
# generation


def _hinge(x):
    return np.maximum(0.0, x)


def _cbc_panel(rng, male, base_hct, base_mcv, base_rdw):
    """One CBC per entry of the (broadcast) inputs, rounded as a lab reports it."""
    shape = np.shape(base_hct)
    hct = np.round(np.clip(base_hct + rng.normal(0, 1.2, shape), 15, 65), 1)
    mcv = np.round(np.clip(base_mcv + rng.normal(0, 1.5, shape), 55, 120), 1)
    rdw = np.round(np.clip(base_rdw + rng.normal(0, 0.4, shape), 10, 25), 1)
    hgb = np.round(hct / 3.0 * (1 + rng.normal(0, 0.02, shape)), 1)
    rbc = np.round(hct / mcv * 10.0, 2)
    mch = np.round(hgb / rbc * 10.0, 1)
    mchc = np.round(hgb / hct * 100.0, 1)
    plt_ = np.round(np.clip(rng.normal(260 - 10 * male, 60, shape), 20, 900), 0)
    wbc = np.round(np.exp(rng.normal(np.log(7.0), 0.3, shape)), 1)
    values = {"HGB": hgb, "HCT": hct, "PLT": plt_, "MCV": mcv, "MCH": mch, "MCHC": mchc,
              "RDW": rdw, "RBC": rbc, "WBC": wbc}
    return [values[c] for c in CBC_CODES]


def _ragged_times(rng, counts, lo, hi):
    """Owner index and uniform integer times in ``[lo, hi]`` for ``counts[i]`` draws per owner."""
    owner = np.repeat(np.arange(len(counts)), counts)
    lo = np.broadcast_to(lo, len(counts))[owner]
    hi = np.broadcast_to(hi, len(counts))[owner]
    return owner, lo + np.floor(rng.random(len(owner)) * (hi - lo + 1)).astype(np.int64)


def _padded(owner, values, n, fill):
    """(n, max_count) matrix of per-owner values, left-aligned, padded with ``fill``."""
    counts = np.bincount(owner, minlength=n)
    width = max(1, int(counts.max()) if len(counts) else 1)
    out = np.full((n, width), fill, dtype=np.asarray(values).dtype)
    order = np.argsort(owner, kind="stable")
    start = np.r_[0, np.cumsum(counts)[:-1]]
    rank = np.arange(len(owner)) - np.repeat(start, counts)
    out[owner[order], rank] = np.asarray(values)[order]
    return out


def _low_ferritin_values(rng, is_low, male):
    cut = np.where(male, reference_limit(FERRITIN, Gender.MALE).low, reference_limit(FERRITIN, Gender.FEMALE).low)
    low = cut * rng.uniform(0.2, 0.95, len(is_low))
    normal = cut + np.exp(rng.normal(np.log(60.0), 0.7, len(is_low)))
    return np.round(np.where(is_low, low, normal), 1)


class _Simulation:
    """Everything that does not depend on the intercept, drawn once (common random numbers)."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
        n = cfg.n_patients
        self.rng = rng
        self.start = int((np.datetime64(cfg.study_start, "s") - EPOCH).astype(np.int64))
        self.end = int((np.datetime64(cfg.study_end + timedelta(days=1), "s") - EPOCH).astype(np.int64)) - 1
        self.hist_lo = self.start - int(cfg.history_years * 365 * DAY)

        self.male = rng.random(n) < cfg.male_fraction
        age0 = rng.uniform(18, 90, n)
        self.birth = np.array([cfg.study_start - timedelta(days=int(a * DAYS_PER_YEAR)) for a in age0])
        self.deficient = rng.random(n) < cfg.deficiency_prevalence
        self.severity = np.where(self.deficient, rng.uniform(0.5, 1.5, n), 0.0)
        hct_mean = np.where(self.male, HCT_NORM["male"][0], HCT_NORM["female"][0])
        self.base_hct = hct_mean + rng.normal(0, 2.5, n) - 5.0 * self.severity
        self.base_mcv = MCV_NORM[0] + rng.normal(0, 3.5, n) - 9.0 * self.severity
        self.base_rdw = 13.0 + rng.normal(0, 0.6, n) + 2.2 * self.severity

        # event times: k events at least min gap apart inside the study window
        gap = cfg.min_event_gap_days * DAY
        span = self.end - self.start
        k_cap = max(1, min(cfg.max_events_per_patient, span // gap + 1))
        k = np.minimum(1 + rng.poisson(cfg.events_per_patient_mean - 1.0, n), k_cap)
        self.valid = np.arange(k_cap)[None, :] < k[:, None]
        u = np.where(self.valid, rng.random((n, k_cap)), np.inf)
        u.sort(axis=1)
        free = span - gap * (k - 1)
        offs = np.floor(np.where(self.valid, u, 0.0) * free[:, None]).astype(np.int64)
        self.T = np.where(self.valid, self.start + offs + gap * np.arange(k_cap)[None, :], 0)

        # CBC values at events and the intercept-free part of the ordering logit
        self.cbc = _cbc_panel(rng, self.male[:, None], self.base_hct[:, None] * np.ones((1, k_cap)),
                              self.base_mcv[:, None], self.base_rdw[:, None])
        hct = self.cbc[CBC_CODES.index("HCT")]
        mcv = self.cbc[CBC_CODES.index("MCV")]
        rdw = self.cbc[CBC_CODES.index("RDW")]
        mu = np.where(self.male, HCT_NORM["male"][0], HCT_NORM["female"][0])[:, None]
        sd = np.where(self.male, HCT_NORM["male"][1], HCT_NORM["female"][1])[:, None]
        birth_s = np.array([(np.datetime64(b, "s") - EPOCH).astype(np.int64) for b in self.birth])
        self.age = (self.T - birth_s[:, None]) / DAY / DAYS_PER_YEAR
        self.linear = (cfg.coef_low_hct * _hinge(-(hct - mu) / sd)
                       + cfg.coef_low_mcv * _hinge(-(mcv - MCV_NORM[0]) / MCV_NORM[1])
                       + cfg.coef_high_rdw * _hinge((rdw - RDW_NORM[0]) / RDW_NORM[1])
                       + cfg.coef_age * (self.age - 50.0) / 20.0)

        # ferritins drawn before the study
        lam = np.where(self.deficient, cfg.prior_ferritin_mean_deficient, cfg.prior_ferritin_mean_replete)
        owner, times = _ragged_times(rng, rng.poisson(lam), self.hist_lo, self.start - DAY)
        self.hist_fer_owner, self.hist_fer_t = owner, times
        self.hist_fer = _padded(owner, times, n, NEVER)

        # draws consumed by the ordering simulation
        self.u_order = rng.random((n, k_cap))
        self.u_pre = rng.random((n, k_cap))
        self.u_offset = rng.random((n, k_cap))

    def run(self, intercept: float):
        cfg = self.cfg
        n, k_cap = self.T.shape
        order_t = np.full((n, k_cap), NEVER, dtype=np.int64)
        ordered = np.zeros((n, k_cap), dtype=bool)
        pre = np.zeros((n, k_cap), dtype=bool)
        prior = np.zeros((n, k_cap), dtype=np.int64)
        prob = np.zeros((n, k_cap))
        for j in range(k_cap):
            t = self.T[:, j]
            lo = (t - 730 * DAY)[:, None]
            hi = (t - 30 * DAY)[:, None]
            # each ferritin already on file in the window adds the same log-odds step
            pr = ((self.hist_fer >= lo) & (self.hist_fer <= hi)).sum(axis=1)
            if j:
                pr += ((order_t[:, :j] >= lo) & (order_t[:, :j] <= hi)).sum(axis=1)
            p = expit(intercept + self.linear[:, j] + cfg.coef_prior_ferritin * pr)
            o = self.valid[:, j] & (self.u_order[:, j] < p)
            early = o & (self.u_pre[:, j] < cfg.pre_cbc_fraction)
            offset = np.where(early, -(60 + np.floor(self.u_offset[:, j] * 121)),
                              np.floor(self.u_offset[:, j] * (30 * DAY + 1))).astype(np.int64)
            order_t[o, j] = t[o] + offset[o]
            ordered[:, j], pre[:, j], prior[:, j], prob[:, j] = o, early, pr, p
        return ordered, pre, prior, prob, order_t

    def rate(self, intercept: float) -> float:
        return float(self.run(intercept)[0][self.valid].mean())


def calibrate_intercept(sim: _Simulation, target: float, tol: float, lo: float = -20.0, hi: float = 10.0) -> float:
    """Bisection on the intercept until the realised ordering rate is within ``tol`` of ``target``."""
    r_lo, r_hi = sim.rate(lo), sim.rate(hi)
    if not r_lo <= target <= r_hi:
        raise CalibrationFailure(
            f"target ordering rate {target} outside reachable range [{r_lo:.4f}, {r_hi:.4f}]")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        r = sim.rate(mid)
        if r < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    best = min((lo, hi), key=lambda b: abs(sim.rate(b) - target))
    if abs(sim.rate(best) - target) > tol:
        raise CalibrationFailure(f"cannot reach ordering rate {target} within {tol}")
    return best


def generate(cfg: SynthConfig = SynthConfig()) -> SynthData:
    sim = _Simulation(cfg)
    rng = sim.rng
    intercept = calibrate_intercept(sim, cfg.target_rate, cfg.calibration_tol)
    ordered, pre, prior, prob, order_t = sim.run(intercept)
    n, k_cap = sim.T.shape
    pids = np.array([f"P{i:06d}" for i in range(n)], dtype=object)

    rows_pid, rows_code, rows_val, rows_t = [], [], [], []

    def emit(owner, code, values, times):
        rows_pid.append(pids[owner])
        rows_code.append(np.full(len(owner), code, dtype=object))
        rows_val.append(np.asarray(values, dtype=float))
        rows_t.append(np.asarray(times, dtype=np.int64))

    # CBCs at study events
    ev_p, ev_j = np.nonzero(sim.valid)
    for code, vals in zip(CBC_CODES, sim.cbc):
        emit(ev_p, code, vals[ev_p, ev_j], sim.T[ev_p, ev_j])

    # CBC panels before the study
    owner, times = _ragged_times(rng, rng.poisson(cfg.prior_cbc_panels_mean, n), sim.hist_lo, sim.start - DAY)
    panel = _cbc_panel(rng, sim.male[owner], sim.base_hct[owner], sim.base_mcv[owner], sim.base_rdw[owner])
    for code, vals in zip(CBC_CODES, panel):
        emit(owner, code, vals, times)

    # other analytes across history and study year
    for code, (mean, sd, decimals, shift) in OTHER_ANALYTES.items():
        owner, times = _ragged_times(rng, rng.poisson(cfg.other_analyte_mean, n), sim.hist_lo, sim.end)
        vals = mean + shift * sim.severity[owner] + rng.normal(0, sd, len(owner))
        emit(owner, code, np.round(np.maximum(vals, 0.1 ** decimals), decimals), times)

    # ferritins: pre-study history, then ordered at events
    if cfg.mcar_mode:
        p_low_hist = np.full(len(sim.hist_fer_owner), cfg.mcar_low_rate)
    else:
        p_low_hist = expit(cfg.low_ferritin_base + cfg.low_ferritin_deficiency * sim.deficient[sim.hist_fer_owner])
    o = sim.hist_fer_owner
    emit(o, FERRITIN, _low_ferritin_values(rng, rng.random(len(o)) < p_low_hist, sim.male[o]), sim.hist_fer_t)

    op, oj = np.nonzero(ordered)
    if cfg.mcar_mode:
        p_low = np.full(len(op), cfg.mcar_low_rate)
    else:
        coupling = cfg.mnar_strength * (logit(prob[op, oj]) - logit(cfg.target_rate))
        p_low = expit(cfg.low_ferritin_base + coupling + cfg.low_ferritin_deficiency * sim.deficient[op])
    emit(op, FERRITIN, _low_ferritin_values(rng, rng.random(len(op)) < p_low, sim.male[op]), order_t[op, oj])

    stamps = (EPOCH + np.concatenate(rows_t).astype("timedelta64[s]")).astype("datetime64[ns]")
    labs = LabTable(np.concatenate(rows_pid), np.concatenate(rows_code), np.concatenate(rows_val), stamps)

    patients = [Patient(str(pids[i]), Gender.MALE if sim.male[i] else Gender.FEMALE, sim.birth[i]) for i in range(n)]
    ev_t = (EPOCH + sim.T[ev_p, ev_j].astype("timedelta64[s]")).astype("datetime64[ns]")
    events = pd.DataFrame({
        "event_id": event_ids(pids[ev_p], ev_t),
        "patient_id": pids[ev_p],
        "true_prob": prob[ev_p, ev_j],
        "iron_deficient": sim.deficient[ev_p],
        "pre_cbc_ferritin": pre[ev_p, ev_j],
        "ordered": ordered[ev_p, ev_j],
        "prior_ferritin_count": prior[ev_p, ev_j],
    })
    latent = pd.DataFrame({"patient_id": pids, "iron_deficient": sim.deficient.astype(int),
                           "severity": sim.severity, "base_hct": sim.base_hct,
                           "base_mcv": sim.base_mcv, "base_rdw": sim.base_rdw})
    labels = events["ordered"].to_numpy() & ~events["pre_cbc_ferritin"].to_numpy()
    meta = {
        "config": cfg.to_dict(),
        "intercept": intercept,
        "n_patients": n,
        "n_events": int(len(events)),
        "ordering_rate": float(events["ordered"].mean()),
        "label_rate": float(labels.mean()),
        "n_pre_cbc_ferritin": int(events["pre_cbc_ferritin"].sum()),
        "bayes_auc": bayes_auc(events["true_prob"].to_numpy(), labels),
    }
    return SynthData(patients, labs, GroundTruth(events, latent, meta), cfg)


def write_synth(data: SynthData, directory) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"patients": d / "patients.csv", "labs": d / "labs.csv", "truth": d / "truth.csv"}
    with open(paths["patients"], "w", encoding="utf-8", newline="") as fh:
        write_patients(data.patients, fh)
    with open(paths["labs"], "w", encoding="utf-8", newline="") as fh:
        write_labs(data.labs, fh)
    data.truth.write(d)
    return paths
