"""Command-line entry point: ``smartreflex <subcommand> ...``.

Exit codes: 1 ingest, 2 cohort, 3 featurize, 4 train, 5 evaluate (and the
analyses built on evaluation), 6 configuration or usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from . import __version__, pipeline
from .cohort import LabelPolicy
from .config import load_config
from .errors import ConfigError
from .synth import SynthConfig

log = logging.getLogger("smartreflex")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(pipeline.EXIT_CODES["config"], f"{self.prog}: error: {message}\n")


def _date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smartreflex", description="Ferritin reflex prediction from CBC results and lab history.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads for tree fitting (results do not depend on it; default 1)")
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-gen", help="generate synthetic patients, labs and ground truth")
    s.add_argument("--config", type=Path, help="config file; settings read from its [synth] section")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override the generator seed")
    s.add_argument("--n-patients", type=_positive_int, help="override the number of patients")
    s.add_argument("--mcar", action="store_true", help="ferritin lowness independent of ordering probability")

    s = sub.add_parser("build-cohort", help="extract CBC events and ferritin-ordered labels")
    s.add_argument("--labs", type=Path, required=True, help="labs CSV")
    s.add_argument("--patients", type=Path, required=True, help="patients CSV")
    s.add_argument("--policy", choices=["primary", "refined"], default="primary", help="labeling policy")
    s.add_argument("--study-start", type=_date, help="first study date (default: inferred from CBC dates)")
    s.add_argument("--study-end", type=_date, help="last study date, inclusive")
    s.add_argument("--strict", action="store_true", help="abort on the first malformed input row")
    s.add_argument("--out", type=Path, required=True, help="cohort CSV to write")

    s = sub.add_parser("featurize", help="build the raw feature matrix for a cohort")
    s.add_argument("--cohort", type=Path, required=True, help="cohort CSV")
    s.add_argument("--labs", type=Path, required=True, help="labs CSV")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.add_argument("--anchor", choices=["per-event", "per-patient"], default="per-event",
                   help="start history windows at each CBC or at the patient's first study CBC")
    s.add_argument("--drop-std", action="store_true", help="omit per-analyte standard deviation features")
    s.add_argument("--strict", action="store_true", help="abort on the first malformed input row")

    s = sub.add_parser("train", help="split, tune and save one model per run")
    s.add_argument("--features", type=Path, required=True, help="features directory")
    s.add_argument("--out", type=Path, required=True, help="models directory")
    s.add_argument("--config", type=Path, help="config file supplying [split] and [model] settings")
    s.add_argument("--splits", help='train:tune:test ratios, e.g. "80:10:10"')
    s.add_argument("--runs", type=_positive_int, help="number of Monte-Carlo runs (default 10)")
    s.add_argument("--seed", type=int, help="split and model seed (default 0)")
    s.add_argument("--metric", choices=["auroc", "auprc"], help="tuning metric (default auroc)")
    s.add_argument("--no-scale", action="store_true", help="impute but do not standardise features")
    s.add_argument("--l2", help="logistic L2 strengths, space or comma separated")
    s.add_argument("--n-trees", help="forest sizes")
    s.add_argument("--max-depth", help='forest depths ("none" for unlimited)')
    s.add_argument("--min-leaf", help="forest minimum samples per leaf")

    s = sub.add_parser("evaluate", help="metrics per run and across runs")
    s.add_argument("--models", type=Path, required=True, help="models directory")
    s.add_argument("--features", type=Path, required=True, help="features directory")
    s.add_argument("--out", type=Path, required=True, help="output directory for report.json and curves.csv")
    s.add_argument("--bins", type=int, default=10, help="calibration bins (default 10)")

    s = sub.add_parser("compare-rules", help="rule-based protocols against the model ROC")
    s.add_argument("--cohort", type=Path, required=True, help="cohort CSV")
    s.add_argument("--labs", type=Path, required=True, help="labs CSV")
    s.add_argument("--models", type=Path, required=True, help="models directory")
    s.add_argument("--out", type=Path, required=True, help="figure4.csv to write")
    s.add_argument("--seed", type=int, default=0, help="seed of the random reflex controls")

    s = sub.add_parser("mnar", help="low-ferritin proportion by predicted-probability decile")
    s.add_argument("--models", type=Path, required=True, help="models directory")
    s.add_argument("--cohort", type=Path, required=True, help="cohort CSV")
    s.add_argument("--labs", type=Path, required=True, help="labs CSV")
    s.add_argument("--policy", choices=["primary", "refined"], default="primary",
                   help="policy the cohort was labeled with (selects the labeling ferritin)")
    s.add_argument("--out", type=Path, required=True, help="mnar.csv to write")

    s = sub.add_parser("review-queue", help="least-expected orders and most-expected non-orders")
    s.add_argument("--models", type=Path, required=True, help="models directory")
    s.add_argument("--cohort", type=Path, required=True, help="cohort CSV")
    s.add_argument("--k", type=_positive_int, default=200, help="cases per group (default 200)")
    s.add_argument("--m", type=_positive_int, default=20, help="cases sampled per group (default 20)")
    s.add_argument("--runs", type=_positive_int, default=3, help="first runs considered (default 3)")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.add_argument("--out", type=Path, required=True, help="review_queue.csv to write")

    s = sub.add_parser("decide", help="reflex decision for one CBC")
    s.add_argument("--model", type=Path, required=True, help="model artifact JSON")
    s.add_argument("--input", type=Path, required=True, help="JSON object of feature values ('-' for stdin)")
    s.add_argument("--mode", choices=["variation1", "variation2"], required=True,
                   help="variation1 cancels a pre-ordered reflex; variation2 adds one")
    s.add_argument("--threshold", type=float, help="probability threshold (default 0.05 / 0.52)")
    s.add_argument("--clinician-ordered", choices=["yes", "no"],
                   help="whether the clinician ordered the reflex (default: yes for variation1, no for variation2)")

    s = sub.add_parser("pipeline", help="run every stage from a config file")
    s.add_argument("--config", type=Path, help="config file (omit for synthetic defaults)")
    s.add_argument("--out", type=Path, help="override [paths] output")
    s.add_argument("--seed", type=int, help="override [split] seed")
    s.add_argument("--runs", type=_positive_int, help="override [split] n_runs")
    s.add_argument("--strict", action="store_true", help="abort on the first malformed input row")
    return p


def _train_settings(args):
    overrides = {
        "split.ratios": args.splits, "split.n_runs": args.runs, "split.seed": args.seed,
        "model.tuning_metric": args.metric, "model.scale": "false" if args.no_scale else None,
        "model.logistic_l2": args.l2, "model.forest_n_trees": args.n_trees,
        "model.forest_max_depth": args.max_depth, "model.forest_min_samples_leaf": args.min_leaf,
    }
    return load_config(args.config, overrides)


def run(args) -> int:
    threads = args.threads
    cmd = args.command
    if cmd == "synth-gen":
        cfg = SynthConfig.from_file(args.config) if args.config else SynthConfig()
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.n_patients is not None:
            updates["n_patients"] = args.n_patients
        if args.mcar:
            updates["mcar_mode"] = True
        if updates:
            cfg = SynthConfig(**{**cfg.__dict__, **updates})
        pipeline.synth_gen(cfg, args.out)
    elif cmd == "build-cohort":
        window = None
        if args.study_start or args.study_end:
            if not (args.study_start and args.study_end):
                raise ConfigError("give both --study-start and --study-end")
            window = (args.study_start, args.study_end)
        pipeline.build_cohort_file(args.labs, args.patients, args.out, LabelPolicy(args.policy), window, args.strict)
    elif cmd == "featurize":
        pipeline.featurize(args.cohort, args.labs, args.out, anchor=args.anchor.replace("-", "_"),
                           drop_std=args.drop_std, strict=args.strict)
    elif cmd == "train":
        cfg = _train_settings(args)
        pipeline.train(args.features, args.out, ratios=cfg.ratios, n_runs=cfg.n_runs, seed=cfg.seed,
                       grid=cfg.grid.configs(), metric=cfg.tuning_metric, scale=cfg.scale,
                       threads=threads or cfg.threads)
    elif cmd == "evaluate":
        if args.bins < 2:
            raise ConfigError("--bins must be at least 2")
        pipeline.evaluate(args.models, args.features, args.out, calibration_bins=args.bins)
    elif cmd == "compare-rules":
        comparison = pipeline.compare_rules(args.cohort, args.labs, args.models, args.out, seed=args.seed)
        for row in comparison.rule_rows():
            s = row.score
            log.info("%-32s sens %.3f spec %.3f | model sens at spec %.3f, spec at sens %.3f", row.name,
                     s.sensitivity, s.specificity, row.model_sensitivity_at_specificity,
                     row.model_specificity_at_sensitivity)
    elif cmd == "mnar":
        pipeline.mnar(args.models, args.cohort, args.labs, args.out, policy=LabelPolicy(args.policy))
    elif cmd == "review-queue":
        pipeline.review(args.models, args.cohort, args.out, k=args.k, m=args.m, runs=args.runs, seed=args.seed)
    elif cmd == "decide":
        try:
            text = sys.stdin.read() if str(args.input) == "-" else args.input.read_text()
            payload = json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise pipeline.StageError("evaluate", exc) from exc
        if not isinstance(payload, dict):
            raise pipeline.StageError("evaluate", ValueError("decide input must be a JSON object"))
        ordered = None if args.clinician_ordered is None else args.clinician_ordered == "yes"
        decision = pipeline.decide(args.model, payload, args.mode, args.threshold, ordered)
        print(json.dumps(decision, sort_keys=True))
    elif cmd == "pipeline":
        overrides = {"paths.output": args.out, "split.seed": args.seed, "split.n_runs": args.runs,
                     "run.strict": "true" if args.strict else None,
                     "run.threads": threads}
        cfg = load_config(args.config, overrides)
        manifest = pipeline.run_pipeline(cfg)
        log.info("pipeline finished; %d files listed in %s", len(manifest.files), Path(cfg.output) / "manifest.json")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="smartreflex: %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except pipeline.StageError as exc:
        print(f"smartreflex: {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"smartreflex: configuration error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CODES["config"]


if __name__ == "__main__":
    sys.exit(main())
