"""Metrics, cross-run aggregation and the analyses built on model probabilities."""
from .analysis import (
    Action, DecileAnalysis, EventProbability, OperatingPoint, ReflexDecision, ReflexMode, ReviewQueue,
    RuleComparison, compare_rules_vs_model, event_probabilities, mnar_decile_analysis, reflex_decide,
    review_queue,
)
from .metrics import (
    AggregateMetrics, RunMetrics, aggregate_runs, brier_loss, calibration_curve, pr_curve, roc_auc, roc_curve,
    run_metrics,
)
from .stats import spearman_rho, wilson_ci
