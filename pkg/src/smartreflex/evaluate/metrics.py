"""Discrimination and calibration metrics, and their aggregation across runs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientData, UndefinedMetric

GRID = np.linspace(0.0, 1.0, 101)


def _sorted_counts(scores, labels):
    """Cumulative (tp, fp) at each distinct threshold, highest score first."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D of equal length")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each group of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return tp.astype(np.float64), fp.astype(np.float64), s[ends]


def roc_curve(scores, labels) -> tuple[np.ndarray, float]:
    """ROC points ``(fpr, tpr)`` from (0,0) to (1,1) and the trapezoid auROC."""
    tp, fp, _ = _sorted_counts(scores, labels)
    n_pos, n_neg = (tp[-1], fp[-1]) if len(tp) else (0.0, 0.0)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("auROC needs at least one positive and one negative label")
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    # trapezoid area on raw counts: the numerator is a half-integer, so the
    # result equals the pairwise (Mann-Whitney) statistic exactly
    tp0, fp0 = np.r_[0.0, tp], np.r_[0.0, fp]
    area = np.sum(np.diff(fp0) * (tp0[1:] + tp0[:-1])) / 2.0
    auc = float(area / (n_pos * n_neg))
    return np.column_stack([fpr, tpr]), auc


def roc_auc(scores, labels) -> float:
    return roc_curve(scores, labels)[1]


def pr_curve(scores, labels) -> tuple[np.ndarray, float]:
    """Precision-recall points ``(recall, precision)`` and average precision.

    The curve starts at (0, 1); average precision is the step-wise sum
    of precision weighted by each recall increment.
    """
    tp, fp, _ = _sorted_counts(scores, labels)
    n_pos = tp[-1] if len(tp) else 0.0
    if n_pos == 0:
        raise UndefinedMetric("auPRC needs at least one positive label")
    recall = tp / n_pos
    precision = tp / (tp + fp)
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return np.column_stack([np.r_[0.0, recall], np.r_[1.0, precision]]), ap


def brier_loss(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.mean((p - y) ** 2))


def calibration_curve(probs, labels, n_bins: int = 10) -> list[tuple[float, float, int]]:
    """``(mean predicted, observed rate, n)`` per non-empty equal-width bin."""
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    b = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    n = np.bincount(b, minlength=n_bins)
    sp = np.bincount(b, weights=p, minlength=n_bins)
    sy = np.bincount(b, weights=y, minlength=n_bins)
    return [(float(sp[i] / n[i]), float(sy[i] / n[i]), int(n[i])) for i in range(n_bins) if n[i] > 0]


def roc_on_grid(points: np.ndarray, grid: np.ndarray = GRID) -> np.ndarray:
    """TPR at each grid FPR, interpolating linearly between ROC vertices.

    At an FPR with a vertical run of points the highest TPR is used.
    """
    fpr, tpr = points[:, 0], points[:, 1]
    i = np.searchsorted(fpr, grid, side="right") - 1
    j = np.minimum(i + 1, len(fpr) - 1)
    span = fpr[j] - fpr[i]
    w = np.where(span > 0, (grid - fpr[i]) / np.where(span > 0, span, 1.0), 0.0)
    return tpr[i] + w * (tpr[j] - tpr[i])


def pr_on_grid(points: np.ndarray, grid: np.ndarray = GRID) -> np.ndarray:
    """Precision at each grid recall, taken from the first point reaching that recall."""
    recall, precision = points[:, 0], points[:, 1]
    k = np.minimum(np.searchsorted(recall, grid, side="left"), len(recall) - 1)
    return precision[k]


@dataclass
class RunMetrics:
    run: int
    auroc: float
    auprc: float
    brier: float
    roc_points: np.ndarray
    pr_points: np.ndarray
    calibration_bins: list = field(default_factory=list)
    n_events: int = 0
    n_positive: int = 0

    def summary(self) -> dict:
        return {"run": self.run, "auroc": self.auroc, "auprc": self.auprc, "brier": self.brier,
                "n_events": self.n_events, "n_positive": self.n_positive,
                "calibration": [list(b) for b in self.calibration_bins]}


def run_metrics(run: int, probs, labels, n_bins: int = 10) -> RunMetrics:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    roc, auroc = roc_curve(probs, labels)
    pr, auprc = pr_curve(probs, labels)
    return RunMetrics(run, auroc, auprc, brier_loss(probs, labels), roc, pr,
                      calibration_curve(probs, labels, n_bins), len(labels), int(labels.sum()))


@dataclass
class AggregateMetrics:
    n_runs: int
    mean: dict[str, float]
    std: dict[str, float]
    grid: np.ndarray
    roc_mean: np.ndarray
    roc_std: np.ndarray
    pr_mean: np.ndarray
    pr_std: np.ndarray

    def describe(self, metric: str, digits: int = 3) -> str:
        """e.g. ``0.731 (standard deviation=0.004)``."""
        return f"{self.mean[metric]:.{digits}f} (standard deviation={self.std[metric]:.{digits}f})"

    def summary(self) -> dict:
        return {"n_runs": self.n_runs, "mean": self.mean, "std": self.std}


def aggregate_runs(runs: list[RunMetrics], grid: np.ndarray = GRID) -> AggregateMetrics:
    """Mean and sample standard deviation across runs, plus pointwise curve ribbons."""
    if len(runs) < 2:
        raise InsufficientData("aggregation needs at least two runs")
    mean, std = {}, {}
    for name in ("auroc", "auprc", "brier"):
        v = np.array([getattr(r, name) for r in runs])
        mean[name] = float(v.mean())
        std[name] = float(v.std(ddof=1))
    roc = np.array([roc_on_grid(r.roc_points, grid) for r in runs])
    pr = np.array([pr_on_grid(r.pr_points, grid) for r in runs])
    return AggregateMetrics(len(runs), mean, std, grid, roc.mean(0), roc.std(0, ddof=1), pr.mean(0), pr.std(0, ddof=1))
