"""Self-contained trained-model artifacts and their JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import SchemaVersionError
from ..features import FeatureSchema, FeatureVector, ScalerStats
from .forest import ForestModel
from .logistic import LogisticModel

ARTIFACT_FORMAT = "smartreflex-model/1"
KINDS = ("logistic", "forest")


@dataclass
class ModelArtifact:
    kind: str
    model: LogisticModel | ForestModel
    scaler: ScalerStats
    schema: FeatureSchema
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.scaler.check(self.schema)

    def predict_proba(self, raw_rows) -> np.ndarray:
        """Probabilities for raw (unimputed, unscaled) feature rows."""
        return predict_proba(self, raw_rows)

    def to_dict(self) -> dict:
        return {"format": ARTIFACT_FORMAT, "kind": self.kind, "schema": self.schema.to_dict(),
                "scaler": self.scaler.to_dict(), "metadata": self.metadata, "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        if d.get("format") != ARTIFACT_FORMAT:
            raise SchemaVersionError(f"unsupported model artifact format {d.get('format')!r}")
        schema = FeatureSchema.from_dict(d["schema"])
        kind = d["kind"]
        if kind == "logistic":
            model = LogisticModel.from_dict(d["model"])
        elif kind == "forest":
            model = ForestModel.from_dict(d["model"])
        else:
            raise SchemaVersionError(f"unknown model kind {kind!r}")
        return cls(kind, model, ScalerStats.from_dict(d["scaler"]), schema, d.get("metadata", {}))

    def dumps(self) -> str:
        # compact separators keep large forests manageable; key order is fixed
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict_proba(artifact: ModelArtifact, raw_rows) -> np.ndarray | float:
    """Impute and scale with the artifact's own statistics, then predict.

    A single row (1-D input or :class:`FeatureVector`) returns a float.
    """
    if isinstance(raw_rows, FeatureVector):
        artifact.schema.check(raw_rows.schema_version)
        raw_rows = raw_rows.values
    X = np.asarray(raw_rows, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != len(artifact.schema):
        raise SchemaVersionError(f"row has {X.shape[1]} features, artifact schema has {len(artifact.schema)}")
    p = artifact.model.predict_proba(artifact.scaler.transform(X))
    return float(p[0]) if single else p
