"""Random forest of gini CART trees grown on bootstrap samples."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DegenerateLabels
from . import _tree


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | str = "sqrt"
    bootstrap: bool = True
    max_bins: int | None = 255

    def mtry(self, n_features: int) -> int:
        f = self.features_per_split
        if f == "sqrt":
            m = int(math.floor(math.sqrt(n_features)))
        elif f == "all":
            m = n_features
        else:
            m = int(f)
        return max(1, min(n_features, m))

    def capacity_key(self):
        depth = math.inf if self.max_depth is None else self.max_depth
        return (depth, -self.min_samples_leaf, self.n_trees)


@dataclass
class Tree:
    feature: np.ndarray      # int32, -1 at leaves
    threshold: np.ndarray    # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # positive-class fraction of the node
    gain: np.ndarray         # weighted gini decrease of the split (0 at leaves)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def importance(self, n_features: int) -> np.ndarray:
        """Gini importance normalised to sum to one (all zero for a stump)."""
        split = self.feature >= 0
        imp = np.bincount(self.feature[split], weights=self.gain[split], minlength=n_features)
        total = imp.sum()
        return imp / total if total > 0 else imp

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _tree.predict_forest(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                                    self.left, self.right, self.value, np.zeros(1, np.int64))

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist(), "gain": self.gain.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], np.int32), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int32), np.asarray(d["right"], np.int32),
                   np.asarray(d["value"], float), np.asarray(d["gain"], float))


@dataclass
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    n_features: int
    seed: int
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    def head(self, n_trees: int) -> "ForestModel":
        """The forest made of the first ``n_trees`` trees."""
        params = ForestParams(**{**asdict(self.params), "n_trees": n_trees})
        return ForestModel(self.trees[:n_trees], params, self.n_features, self.seed)

    def _flatten(self):
        if self._flat is None:
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
            shift = lambda a, off: np.where(a >= 0, a + off, -1).astype(np.int32)
            self._flat = (
                np.concatenate([t.feature for t in self.trees]).astype(np.int32),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]),
                np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]),
                np.concatenate([t.value for t in self.trees]),
                offsets[:-1].astype(np.int64),
            )
        return self._flat

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return _tree.predict_forest(X, *self._flatten())

    def tree_importances(self) -> np.ndarray:
        return np.array([t.importance(self.n_features) for t in self.trees])

    def to_dict(self) -> dict:
        return {"params": asdict(self.params), "n_features": self.n_features, "seed": self.seed,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls([Tree.from_dict(t) for t in d["trees"]], ForestParams(**d["params"]),
                   int(d["n_features"]), int(d["seed"]))


def tree_seed(seed: int, stream: tuple[int, ...], tree: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream, tree]))


class BinnedData:
    """Training matrix binned once and shared by every tree grown on it."""

    def __init__(self, X: np.ndarray, y: np.ndarray, max_bins: int | None = 255):
        y = np.asarray(y).astype(bool)
        if y.all() or not y.any():
            raise DegenerateLabels("random forest needs both classes in the training labels")
        self.n_samples, self.n_features = np.asarray(X).shape
        self.max_bins = max_bins
        self.edges, self.codes, self.n_bins = _tree.make_bins(X, max_bins)
        self.y = y.astype(np.float64)


def _grow(data: BinnedData, params: ForestParams, seed: int, stream, t: int) -> Tree:
    rng = tree_seed(seed, stream, t)
    n = data.n_samples
    if params.bootstrap:
        weight = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
    else:
        weight = np.ones(n)
    node_seed = int(rng.integers(0, 2**63 - 1))
    depth = -1 if params.max_depth is None else int(params.max_depth)
    feat, sbin, left, right, value, gain, _ = _tree.grow_tree(
        data.codes, data.n_bins, data.y, weight, depth, float(params.min_samples_leaf),
        params.mtry(data.n_features), node_seed)
    threshold = np.zeros(len(feat))
    split = feat >= 0
    threshold[split] = [data.edges[f][b] for f, b in zip(feat[split], sbin[split])]
    return Tree(feat, threshold, left, right, value, gain)


def train_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0, *, stream: tuple[int, ...] = (),
                 threads: int = 1, data: BinnedData | None = None) -> ForestModel:
    """Fit ``params.n_trees`` trees; tree ``t`` draws from the rng stream ``(seed, *stream, t)``.

    Serial and threaded fits give identical forests, and the first ``k``
    trees of a larger forest equal a ``k``-tree forest with the same seed.
    """
    if data is None:
        data = BinnedData(X, y, params.max_bins)
    jobs = range(params.n_trees)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(lambda t: _grow(data, params, seed, stream, t), jobs))
    else:
        trees = [_grow(data, params, seed, stream, t) for t in jobs]
    return ForestModel(trees, params, data.n_features, seed)


def feature_importance(forest: ForestModel, names=None) -> list[tuple[str, float, float]]:
    """Per-feature mean and std of per-tree gini importance, sorted by mean (descending)."""
    imp = forest.tree_importances()
    mean = imp.mean(axis=0)
    std = imp.std(axis=0)
    names = list(names) if names is not None else [str(i) for i in range(forest.n_features)]
    order = sorted(range(len(mean)), key=lambda j: (-mean[j], j))
    return [(names[j], float(mean[j]), float(std[j])) for j in order]
