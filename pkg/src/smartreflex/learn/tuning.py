"""Grid search over logistic and forest configurations on a tuning partition."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import SchemaVersionError
from ..evaluate.metrics import pr_curve, roc_auc
from ..features import FeatureSchema, fit_scaler
from .artifact import ModelArtifact
from .forest import BinnedData, ForestParams, train_forest
from .logistic import train_logistic


@dataclass(frozen=True)
class LogisticConfig:
    l2_strength: float = 1e-4

    def capacity_key(self):
        return (-self.l2_strength,)


Config = LogisticConfig | ForestParams


def kind_of(config: Config) -> str:
    return "logistic" if isinstance(config, LogisticConfig) else "forest"


def describe(config: Config) -> dict:
    return {"kind": kind_of(config), **asdict(config)}


def config_from_dict(d: dict) -> Config:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "logistic":
        return LogisticConfig(float(d["l2_strength"]))
    if kind == "forest":
        return ForestParams(**d)
    raise ValueError(f"unknown model kind {kind!r}")


def default_grid() -> list[Config]:
    grid: list[Config] = [LogisticConfig(l2) for l2 in (1e-4, 1e-3, 1e-2, 1e-1)]
    for n_trees, depth, leaf in itertools.product((100, 300), (8, 16, None), (1, 10, 50)):
        grid.append(ForestParams(n_trees=n_trees, max_depth=depth, min_samples_leaf=leaf))
    return grid


def tie_break_key(config: Config, grid_index: int):
    """Sort key among equal scores: logistic before forest, then smaller capacity, then grid order."""
    rank = 0 if isinstance(config, LogisticConfig) else 1
    return (rank, config.capacity_key(), grid_index)


def score(metric: str, probs, labels) -> float:
    if metric == "auroc":
        return roc_auc(probs, labels)
    if metric == "auprc":
        return pr_curve(probs, labels)[1]
    raise ValueError(f"unknown tuning metric {metric!r}")


@dataclass
class TuningResult:
    artifact: ModelArtifact
    table: list[dict]          # one row per grid entry, in grid order
    best_by_kind: dict[str, ModelArtifact]


def tune(grid, X_train, y_train, X_tune, y_tune, schema: FeatureSchema, *, seed: int = 0, run: int = 0,
         metric: str = "auroc", scale: bool = True, threads: int = 1) -> TuningResult:
    """Fit every configuration on the training rows and keep the best on the tuning rows.

    Rows are raw feature rows; imputation and scaling statistics come from
    the training rows only and travel inside the returned artifact. Forest
    configurations that differ only in ``n_trees`` share one fit: the first
    ``k`` trees of a forest are exactly the ``k``-tree forest.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("tuning grid is empty")
    X_train = np.asarray(X_train, dtype=np.float64)
    X_tune = np.asarray(X_tune, dtype=np.float64)
    if X_train.shape[1] != len(schema):
        raise SchemaVersionError("training rows do not match the feature schema")
    y_train = np.asarray(y_train).astype(bool)
    y_tune = np.asarray(y_tune).astype(bool)
    scaler = fit_scaler(X_train, schema, scale=scale)
    Z_train = scaler.transform(X_train)
    Z_tune = scaler.transform(X_tune)

    scores: dict[int, float] = {}
    best: dict[str, tuple] = {}   # kind -> (key, model, index)

    def consider(i, model, s):
        scores[i] = s
        key = (-s, tie_break_key(grid[i], i))
        kind = kind_of(grid[i])
        if kind not in best or key < best[kind][0]:
            best[kind] = (key, model, i)

    for i, cfg in enumerate(grid):
        if isinstance(cfg, LogisticConfig):
            model = train_logistic(Z_train, y_train, cfg.l2_strength)
            consider(i, model, score(metric, model.predict_proba(Z_tune), y_tune))

    groups: dict[ForestParams, list[int]] = {}
    for i, cfg in enumerate(grid):
        if isinstance(cfg, ForestParams):
            groups.setdefault(ForestParams(**{**asdict(cfg), "n_trees": 1}), []).append(i)
    binned: dict = {}
    for base, members in groups.items():
        if base.max_bins not in binned:
            binned = {base.max_bins: BinnedData(Z_train, y_train, base.max_bins)}
        n_max = max(grid[i].n_trees for i in members)
        forest = train_forest(None, None, ForestParams(**{**asdict(base), "n_trees": n_max}), seed,
                              stream=(run,), threads=threads, data=binned[base.max_bins])
        for i in members:
            head = forest.head(grid[i].n_trees)
            consider(i, head, score(metric, head.predict_proba(Z_tune), y_tune))
        del forest

    def artifact(entry):
        _, model, idx = entry
        cfg = grid[idx]
        metadata = {"run": run, "seed": seed, "hyperparameters": describe(cfg), "tuning_metric": metric,
                    "tuning_value": scores[idx], "grid_index": idx,
                    "n_train": int(len(y_train)), "n_tune": int(len(y_tune))}
        return ModelArtifact(kind_of(cfg), model, scaler, schema, metadata)

    by_kind = {kind: artifact(entry) for kind, entry in sorted(best.items())}
    winner = min(best.values(), key=lambda e: e[0])
    selected = by_kind[kind_of(grid[winner[2]])]
    table = [{**describe(c), "score": scores[i], "selected": i == winner[2]} for i, c in enumerate(grid)]
    return TuningResult(selected, table, by_kind)
