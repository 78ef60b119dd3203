"""File-level stages shared by the command line and the end-to-end pipeline."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .catalog import FERRITIN, Gender
from .cohort import Cohort, LabelPolicy, build_cohort, infer_study_window, label_table, read_cohort, write_cohort
from .config import PipelineConfig
from .errors import (
    ConfigError, DatasetMismatch, DuplicatePatient, IngestError, SchemaVersionError, SmartReflexError,
)
from .evaluate.analysis import (
    OperatingPoint, compare_rules_vs_model, event_probabilities, mnar_decile_analysis, reflex_decide,
    review_queue,
)
from .evaluate.metrics import aggregate_runs, calibration_curve, roc_auc, run_metrics
from .features import FeatureSchema, HistoryWindow, feature_matrix, load_features, save_features
from .ingest import Dataset, load_dataset, parse_lab_results
from .learn.artifact import ModelArtifact, predict_proba
from .learn.forest import feature_importance
from .learn.split import SplitPlan, split_monte_carlo
from .learn.tuning import tune
from .rules import rule_inputs
from .synth import SynthConfig, generate, write_synth

log = logging.getLogger("smartreflex")

EXIT_CODES = {"ingest": 1, "cohort": 2, "featurize": 3, "train": 4, "evaluate": 5, "config": 6}


class StageError(Exception):
    """A stage failed; carries the stage name for the exit code."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.stage]


class stage:
    """Context manager that tags failures with a stage name and logs timing."""

    def __init__(self, name: str, timings: dict | None = None):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.debug("stage %s: start", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if self.timings is not None:
            self.timings[self.name] = self.timings.get(self.name, 0.0) + elapsed
        if exc is None:
            log.info("stage %s: done in %.1fs", self.name, elapsed)
            return False
        if isinstance(exc, StageError):
            return False
        if isinstance(exc, (SmartReflexError, OSError, ValueError, KeyError)):
            kind = self.name
            if isinstance(exc, (IngestError, DuplicatePatient, DatasetMismatch)):
                kind = "ingest"
            elif isinstance(exc, ConfigError):
                kind = "config"
            raise StageError(kind, exc) from exc
        return False


def _write_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# loading helpers


def load_labs_only(labs_path, strict: bool = False) -> Dataset:
    """Lab results without patient demographics (what featurize and the analyses need)."""
    with stage("ingest"):
        with open(labs_path, encoding="utf-8", newline="") as fh:
            results, report = parse_lab_results(fh, strict=strict)
    if report.rows_rejected:
        log.warning("labs: rejected %d rows %s", report.rows_rejected, dict(report.rejection_reasons))
    return Dataset({}, results, {str(labs_path): report.rows_read})


def load_cohort(path, policy: LabelPolicy | None = None) -> Cohort:
    with open(path, encoding="utf-8", newline="") as fh:
        return read_cohort(fh, policy)


def load_predictions(models_dir) -> pd.DataFrame:
    return pd.read_csv(Path(models_dir) / "predictions.csv", dtype={"event_id": str})


# ---------------------------------------------------------------------------
# stages


def synth_gen(config: SynthConfig, out_dir) -> dict:
    with stage("config"):
        data = generate(config)
        write_synth(data, out_dir)
    meta = data.truth.metadata
    log.info("synthetic data: %d patients, %d events, ordering rate %.4f, bayes auROC %.4f",
             meta["n_patients"], meta["n_events"], meta["ordering_rate"], meta["bayes_auc"])
    return meta


def build_cohort_file(labs, patients, out_file, policy: LabelPolicy, study_window=None, strict=False) -> Cohort:
    with stage("ingest"):
        dataset, report = load_dataset(patients, labs, strict=strict)
    if report.rows_rejected:
        log.warning("ingest: rejected %d rows %s", report.rows_rejected, dict(report.rejection_reasons))
    with stage("cohort"):
        window = study_window or infer_study_window(dataset)
        cohort = build_cohort(dataset, window, policy)
        Path(out_file).parent.mkdir(parents=True, exist_ok=True)
        with open(out_file, "w", encoding="utf-8", newline="") as fh:
            write_cohort(cohort, fh)
    s = cohort.stats
    log.info("cohort: %d events, %d patients, positive rate %.4f", s.n_events, s.n_patients, s.positive_rate)
    return cohort


def featurize(cohort_file, labs, out_dir, *, anchor="per_event", drop_std=False, strict=False):
    dataset = load_labs_only(labs, strict)
    with stage("featurize"):
        cohort = load_cohort(cohort_file)
        schema = FeatureSchema.for_dataset(dataset, include_std=not drop_std)
        window = HistoryWindow(anchor_mode=anchor)
        X = feature_matrix(cohort, dataset, schema, window)
        save_features(out_dir, cohort, X, schema, window)
    log.info("features: %d rows x %d columns (%s)", X.shape[0], X.shape[1], schema.version)
    return X, schema


def train(features_dir, out_dir, *, ratios=(0.8, 0.1, 0.1), n_runs=10, seed=0, grid=None,
          metric="auroc", scale=True, threads=1) -> list[ModelArtifact]:
    """Split, tune and save one artifact per run, plus test-set predictions."""
    from .config import GridSpec
    grid = grid if grid is not None else GridSpec().configs()
    with stage("train"):
        fs = load_features(features_dir)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        plan = split_monte_carlo(fs.patient_ids, n_runs=n_runs, ratios=ratios, seed=seed)
        plan.save(out / "splits.json")
        preds, tuning_rows, importance_rows, artifacts = [], [], [], []
        for run in range(n_runs):
            m = plan.masks(run, fs.patient_ids)
            test_patients = set(fs.patient_ids[m["test"]])
            fit_patients = set(fs.patient_ids[m["train"] | m["tune"]])
            if test_patients & fit_patients:
                raise RuntimeError(f"run {run}: test patients leak into fitting partitions")
            res = tune(grid, fs.X[m["train"]], fs.labels[m["train"]], fs.X[m["tune"]], fs.labels[m["tune"]],
                       fs.schema, seed=seed, run=run, metric=metric, scale=scale, threads=threads)
            res.artifact.save(out / f"model_run{run}.json")
            artifacts.append(res.artifact)
            X_test = fs.X[m["test"]]
            frame = pd.DataFrame({"run": run, "event_id": fs.event_ids[m["test"]],
                                  "label": fs.labels[m["test"]].astype(int),
                                  "prob": res.artifact.predict_proba(X_test)})
            for kind, art in res.best_by_kind.items():
                frame[f"prob_{kind}"] = art.predict_proba(X_test)
            preds.append(frame)
            tuning_rows.extend({"run": run, **row} for row in res.table)
            if "forest" in res.best_by_kind:
                forest = res.best_by_kind["forest"].model
                for rank, (name, mean, std) in enumerate(feature_importance(forest, fs.schema.names), start=1):
                    importance_rows.append({"run": run, "rank": rank, "feature": name,
                                            "importance_mean": mean, "importance_std": std})
            log.info("run %d: selected %s (tuning %s %.4f)", run, res.artifact.kind, metric,
                     res.artifact.metadata["tuning_value"])
        _write_csv(pd.concat(preds, ignore_index=True), out / "predictions.csv")
        _write_csv(pd.DataFrame(tuning_rows), out / "tuning.csv")
        if importance_rows:
            _write_csv(pd.DataFrame(importance_rows), out / "importance.csv")
    return artifacts


def evaluate(models_dir, features_dir, out_dir, *, calibration_bins=10) -> dict:
    with stage("evaluate"):
        fs = load_features(features_dir)
        preds = load_predictions(models_dir)
        labels = pd.Series(fs.labels, index=fs.event_ids)
        y_all = labels.reindex(preds["event_id"])
        if y_all.isna().any():
            raise SchemaVersionError("predictions reference events missing from the feature set")
        preds["label"] = y_all.to_numpy().astype(bool)
        runs = []
        per_run = []
        for run, grp in preds.groupby("run", sort=True):
            rm = run_metrics(int(run), grp["prob"].to_numpy(), grp["label"].to_numpy(), calibration_bins)
            runs.append(rm)
            art = ModelArtifact.load(Path(models_dir) / f"model_run{run}.json")
            row = {**rm.summary(), "selected": art.metadata["hyperparameters"],
                   "tuning_value": art.metadata["tuning_value"]}
            for kind in ("logistic", "forest"):
                col = f"prob_{kind}"
                if col in grp:
                    row[f"auroc_{kind}"] = roc_auc(grp[col].to_numpy(), grp["label"].to_numpy())
            per_run.append(row)
        agg = aggregate_runs(runs) if len(runs) >= 2 else None
        pooled = calibration_curve(preds["prob"].to_numpy(), preds["label"].to_numpy(), calibration_bins)
        report = {
            "tool_version": __version__,
            "n_runs": len(runs),
            "n_test_predictions": int(len(preds)),
            "runs": per_run,
            "aggregate": None if agg is None else {
                **agg.summary(),
                "text": {k: agg.describe(k) for k in ("auroc", "auprc", "brier")},
            },
            "pooled_calibration": [list(b) for b in pooled],
        }
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(report, out / "report.json")
        if agg is not None:
            _write_csv(pd.DataFrame({"grid": agg.grid, "roc_tpr_mean": agg.roc_mean, "roc_tpr_std": agg.roc_std,
                                     "pr_precision_mean": agg.pr_mean, "pr_precision_std": agg.pr_std}),
                       out / "curves.csv")
    if agg is not None:
        log.info("auROC %s; auPRC %s; Brier %s", agg.describe("auroc"), agg.describe("auprc"), agg.describe("brier"))
    return report


def _ferritin(labs, strict=False):
    return load_labs_only(labs, strict).results.for_analyte(FERRITIN)


def compare_rules(cohort_file, labs, models_dir, out_file, *, policy=None, seed=0, strict=False):
    ferritin = _ferritin(labs, strict)
    with stage("evaluate"):
        cohort = load_cohort(cohort_file, policy)
        ev = event_probabilities(load_predictions(models_dir))
        pos = pd.Series(np.arange(len(cohort)), index=cohort.event_ids).reindex(ev["event_id"])
        if pos.isna().any():
            raise SchemaVersionError("predictions reference events missing from the cohort")
        idx = pos.to_numpy(dtype=np.int64)
        inputs = rule_inputs(cohort, ferritin).subset(idx)
        comparison = compare_rules_vs_model(cohort.labels[idx], ev["mean_prob"].to_numpy(), inputs, seed=seed)
        _write_csv(comparison.to_frame(), out_file)
    return comparison


def mnar(models_dir, cohort_file, labs, out_file, *, policy=None, strict=False):
    ferritin = _ferritin(labs, strict)
    with stage("evaluate"):
        cohort = load_cohort(cohort_file, policy)
        table = cohort.table
        lab = label_table(table, ferritin, cohort.policy)
        ev = event_probabilities(load_predictions(models_dir)).set_index("event_id")
        positive = table[cohort.labels & table["event_id"].isin(ev.index).to_numpy()]
        values = lab.loc[positive.index, "ferritin_value"].to_numpy(dtype=float)
        result = mnar_decile_analysis(positive["event_id"].to_numpy(),
                                      ev.loc[positive["event_id"], "median_prob"].to_numpy(),
                                      values, positive["gender"].to_numpy() == Gender.MALE.value)
        frame = result.to_frame()
        frame["spearman_rho"] = result.rho
        _write_csv(frame, out_file)
    log.info("low-ferritin proportion by probability decile: Spearman rho %.3f", result.rho)
    return result


def review(models_dir, cohort_file, out_file, *, k=200, m=20, runs=3, seed=0):
    with stage("evaluate"):
        cohort = load_cohort(cohort_file)
        labels = pd.Series(cohort.labels, index=cohort.event_ids)
        queue = review_queue(labels, load_predictions(models_dir), k=k, m=m, runs_considered=runs, seed=seed)
        _write_csv(queue.to_frame(), out_file)
    log.info(queue.describe())
    return queue


def decide(model_file, payload: dict, mode, threshold=None, clinician_ordered=None) -> dict:
    with stage("evaluate"):
        art = ModelArtifact.load(model_file)
        names = art.schema.names
        values = dict(payload)
        if "gender" in values and "gender_male" not in values:
            values["gender_male"] = 1.0 if Gender.parse(str(values.pop("gender"))) is Gender.MALE else 0.0
        unknown = set(values) - set(names)
        if unknown:
            raise SchemaVersionError(f"input fields not in the model's feature schema: {sorted(unknown)}")
        row = np.array([np.nan if values.get(n) is None else float(values[n]) for n in names])
        if np.isnan(row[0]) or np.isnan(row[1]):
            raise SchemaVersionError("input needs age and gender")
        op = OperatingPoint.default(mode) if threshold is None else OperatingPoint(mode, float(threshold))
        decision = reflex_decide(predict_proba(art, row), op, clinician_ordered)
    return decision.to_dict()


# ---------------------------------------------------------------------------
# end to end


@dataclass
class RunManifest:
    tool_version: str
    config: dict
    stage_seconds: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def record_files(self, root) -> None:
        root = Path(root)
        self.files = {str(p.relative_to(root)): sha256(p) for p in sorted(root.rglob("*"))
                      if p.is_file() and p.name != "manifest.json"}

    def to_dict(self) -> dict:
        return {"tool_version": self.tool_version, "config": self.config,
                "stage_seconds": self.stage_seconds, "files": self.files}


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg.check_paths()
    manifest = RunManifest(__version__, cfg.snapshot())
    t = manifest.stage_seconds

    if cfg.uses_synth:
        t0 = time.perf_counter()
        synth_gen(cfg.synth, out / "data")
        t["synth"] = time.perf_counter() - t0
        labs, patients = out / "data" / "labs.csv", out / "data" / "patients.csv"
    else:
        labs, patients = cfg.labs, cfg.patients
    policy = LabelPolicy(cfg.policy)
    cohort_file = out / "cohort.csv"

    def timed(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            t[name] = time.perf_counter() - t0

    timed("build-cohort", build_cohort_file, labs, patients, cohort_file, policy, cfg.study_window, cfg.strict)
    timed("featurize", featurize, cohort_file, labs, out / "features", anchor=cfg.anchor,
          drop_std=cfg.drop_std, strict=cfg.strict)
    timed("train", train, out / "features", out / "models", ratios=cfg.ratios, n_runs=cfg.n_runs,
          seed=cfg.seed, grid=cfg.grid.configs(), metric=cfg.tuning_metric, scale=cfg.scale, threads=cfg.threads)
    timed("evaluate", evaluate, out / "models", out / "features", out / "eval",
          calibration_bins=cfg.calibration_bins)
    timed("compare-rules", compare_rules, cohort_file, labs, out / "models", out / "eval" / "figure4.csv",
          policy=policy, seed=cfg.seed, strict=cfg.strict)
    timed("mnar", mnar, out / "models", cohort_file, labs, out / "eval" / "mnar.csv", policy=policy,
          strict=cfg.strict)
    timed("review-queue", review, out / "models", cohort_file, out / "eval" / "review_queue.csv",
          k=cfg.review_k, m=cfg.review_m, runs=cfg.review_runs, seed=cfg.seed)
    manifest.record_files(out)
    _write_json(manifest.to_dict(), out / "manifest.json")
    return manifest
