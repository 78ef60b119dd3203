"""Splitting, model fitting, tuning and model artifacts."""
from .artifact import ARTIFACT_FORMAT, ModelArtifact, predict_proba
from .forest import ForestModel, ForestParams, Tree, feature_importance, train_forest
from .logistic import LogisticModel, loss_and_grad, train_logistic
from .split import PARTITIONS, SplitPlan, split_monte_carlo
from .tuning import LogisticConfig, TuningResult, config_from_dict, default_grid, describe, tune

__all__ = [
    "ARTIFACT_FORMAT", "ModelArtifact", "predict_proba", "ForestModel", "ForestParams", "Tree",
    "feature_importance", "train_forest", "LogisticModel", "loss_and_grad", "train_logistic",
    "PARTITIONS", "SplitPlan", "split_monte_carlo", "LogisticConfig", "TuningResult",
    "config_from_dict", "default_grid", "describe", "tune",
]
