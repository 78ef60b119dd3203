"""Patient-grouped Monte-Carlo train/tune/test splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InsufficientPatients

PARTITIONS = ("train", "tune", "test")
MIN_PATIENTS = 10


@dataclass
class SplitPlan:
    seed: int
    n_runs: int = 10
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    assignments: list[dict[str, str]] = field(default_factory=list)

    def partition(self, run: int, patient_ids) -> np.ndarray:
        """Partition name for each entry of ``patient_ids`` (one per event is fine)."""
        a = self.assignments[run]
        return np.array([a[p] for p in patient_ids], dtype=object)

    def masks(self, run: int, patient_ids) -> dict[str, np.ndarray]:
        part = self.partition(run, patient_ids)
        return {name: part == name for name in PARTITIONS}

    def patients(self, run: int, name: str) -> set[str]:
        return {p for p, v in self.assignments[run].items() if v == name}

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n_runs": self.n_runs, "ratios": list(self.ratios),
                "runs": [{name: sorted(self.patients(r, name)) for name in PARTITIONS}
                         for r in range(self.n_runs)]}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        assignments = [{p: name for name in PARTITIONS for p in run[name]} for run in d["runs"]]
        return cls(int(d["seed"]), int(d["n_runs"]), tuple(d["ratios"]), assignments)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SplitPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def partition_sizes(n: int, ratios) -> tuple[int, int, int]:
    r_train, r_tune, r_test = (float(r) / sum(ratios) for r in ratios)
    n_tune = int(round(n * r_tune))
    n_test = int(round(n * r_test))
    if n_tune < 1 or n_test < 1 or n - n_tune - n_test < 1:
        raise InsufficientPatients(f"{n} patients cannot fill train/tune/test partitions")
    return n - n_tune - n_test, n_tune, n_test


def split_monte_carlo(patient_ids, *, n_runs: int = 10, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitPlan:
    """Assign each distinct patient to one partition, independently per run.

    Patients are sorted before shuffling, so the plan depends only on the
    set of patient ids and the seed.
    """
    ids = sorted(set(patient_ids))
    if len(ids) < MIN_PATIENTS:
        raise InsufficientPatients(f"need at least {MIN_PATIENTS} patients, got {len(ids)}")
    n_train, n_tune, _ = partition_sizes(len(ids), ratios)
    assignments = []
    for run in range(n_runs):
        order = np.random.default_rng([seed, run]).permutation(len(ids))
        a = {}
        for rank, i in enumerate(order):
            a[ids[i]] = "train" if rank < n_train else ("tune" if rank < n_train + n_tune else "test")
        assignments.append(a)
    return SplitPlan(seed, n_runs, tuple(ratios), assignments)
