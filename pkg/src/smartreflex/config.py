"""Pipeline configuration: an INI-style file of ``key = value`` lines under section headers.

Example::

    [paths]
    output = run1
    # labs/patients omitted -> synthetic data generated from [synth]

    [split]
    n_runs = 10
    seed = 7
"""
from __future__ import annotations

import configparser
import dataclasses
import itertools
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .cohort import LabelMode
from .errors import ConfigError
from .evaluate.analysis import DEFAULT_THRESHOLDS, ReflexMode
from .features import AnchorMode
from .learn.forest import ForestParams
from .learn.tuning import LogisticConfig
from .synth import SynthConfig

DEFAULT_L2 = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_N_TREES = (100, 300)
DEFAULT_DEPTHS = (8, 16, None)
DEFAULT_LEAVES = (1, 10, 50)


def parse_ratios(text: str) -> tuple[float, float, float]:
    """``"80:10:10"`` or ``"0.8,0.1,0.1"`` -> fractions summing to one."""
    parts = [p for p in str(text).replace(",", ":").split(":") if p.strip()]
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad split ratios {text!r}") from exc
    if len(values) != 3 or any(v <= 0 for v in values):
        raise ConfigError(f"split ratios need three positive parts, got {text!r}")
    total = sum(values)
    return tuple(v / total for v in values)


def _list(text: str, conv):
    out = []
    for item in str(text).replace(",", " ").split():
        if item.lower() in ("none", "null", "unlimited"):
            out.append(None)
        else:
            try:
                out.append(conv(item))
            except ValueError as exc:
                raise ConfigError(f"bad list entry {item!r}") from exc
    if not out:
        raise ConfigError("empty list")
    return tuple(out)


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class GridSpec:
    logistic_l2: tuple = DEFAULT_L2
    forest_n_trees: tuple = DEFAULT_N_TREES
    forest_max_depth: tuple = DEFAULT_DEPTHS
    forest_min_samples_leaf: tuple = DEFAULT_LEAVES
    features_per_split: str = "sqrt"

    def configs(self) -> list:
        grid = [LogisticConfig(float(l2)) for l2 in self.logistic_l2]
        for n, depth, leaf in itertools.product(self.forest_n_trees, self.forest_max_depth,
                                                self.forest_min_samples_leaf):
            grid.append(ForestParams(n_trees=int(n), max_depth=depth, min_samples_leaf=int(leaf),
                                     features_per_split=self.features_per_split))
        return grid


@dataclass
class PipelineConfig:
    labs: Path | None = None
    patients: Path | None = None
    output: Path = Path("smartreflex-out")
    synth: SynthConfig = field(default_factory=SynthConfig)
    policy: LabelMode = LabelMode.PRIMARY
    study_start: date | None = None
    study_end: date | None = None
    anchor: AnchorMode = AnchorMode.PER_EVENT
    drop_std: bool = False
    ratios: tuple = (0.8, 0.1, 0.1)
    n_runs: int = 10
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    tuning_metric: str = "auroc"
    scale: bool = True
    calibration_bins: int = 10
    review_k: int = 200
    review_m: int = 20
    review_runs: int = 3
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    strict: bool = False
    threads: int = 1

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be positive")
        if self.tuning_metric not in ("auroc", "auprc"):
            raise ConfigError(f"unknown tuning metric {self.tuning_metric!r}")
        if self.calibration_bins < 2:
            raise ConfigError("calibration_bins must be at least 2")
        if (self.labs is None) != (self.patients is None):
            raise ConfigError("give both labs and patients paths, or neither (synthetic data)")

    @property
    def uses_synth(self) -> bool:
        return self.labs is None

    @property
    def study_window(self):
        if self.uses_synth:
            return (self.study_start or self.synth.study_start, self.study_end or self.synth.study_end)
        if self.study_start and self.study_end:
            return (self.study_start, self.study_end)
        return None

    def check_paths(self) -> None:
        for p in (self.labs, self.patients):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"input file not found: {p}")

    def snapshot(self) -> dict:
        """Plain-data view for manifests (paths as given)."""
        def plain(v):
            if dataclasses.is_dataclass(v):
                return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
            if isinstance(v, (Path, date)):
                return str(v)
            if isinstance(v, dict):
                return {getattr(k, "value", k): plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return getattr(v, "value", v)
        return plain(self)


SECTIONS = {
    "paths": {"labs", "patients", "output"},
    "cohort": {"policy", "study_start", "study_end"},
    "features": {"anchor", "drop_std"},
    "split": {"ratios", "n_runs", "seed"},
    "model": {"logistic_l2", "forest_n_trees", "forest_max_depth", "forest_min_samples_leaf",
              "features_per_split", "tuning_metric", "scale"},
    "evaluate": {"calibration_bins"},
    "review": {"k", "m", "runs"},
    "decide": {"variation1_threshold", "variation2_threshold"},
    "run": {"strict", "threads"},
}


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a config file (optional) and apply ``overrides`` (section.key -> value strings)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))

    for section in parser.sections():
        if section == "synth":
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")

    def get(section, key, default=None):
        return parser.get(section, key, fallback=default) if parser.has_section(section) else default

    try:
        base = Path(path).parent if path is not None else Path(".")

        def resolve(p):
            return None if p is None else (Path(p) if Path(p).is_absolute() else base / p)

        grid = GridSpec(
            logistic_l2=_list(get("model", "logistic_l2", "1e-4 1e-3 1e-2 1e-1"), float),
            forest_n_trees=_list(get("model", "forest_n_trees", "100 300"), int),
            forest_max_depth=_list(get("model", "forest_max_depth", "8 16 none"), int),
            forest_min_samples_leaf=_list(get("model", "forest_min_samples_leaf", "1 10 50"), int),
            features_per_split=get("model", "features_per_split", "sqrt"),
        )
        start, end = get("cohort", "study_start"), get("cohort", "study_end")
        thresholds = {
            ReflexMode.VARIATION1_CANCEL: float(get("decide", "variation1_threshold",
                                                    DEFAULT_THRESHOLDS[ReflexMode.VARIATION1_CANCEL])),
            ReflexMode.VARIATION2_ADD: float(get("decide", "variation2_threshold",
                                                 DEFAULT_THRESHOLDS[ReflexMode.VARIATION2_ADD])),
        }
        synth = SynthConfig.from_mapping(dict(parser["synth"])) if parser.has_section("synth") else SynthConfig()
        return PipelineConfig(
            labs=resolve(get("paths", "labs")),
            patients=resolve(get("paths", "patients")),
            output=resolve(get("paths", "output", "smartreflex-out")),
            synth=synth,
            policy=LabelMode(get("cohort", "policy", "primary")),
            study_start=date.fromisoformat(start) if start else None,
            study_end=date.fromisoformat(end) if end else None,
            anchor=AnchorMode.parse(get("features", "anchor", "per-event")),
            drop_std=_bool(get("features", "drop_std", "false")),
            ratios=parse_ratios(get("split", "ratios", "80:10:10")),
            n_runs=int(get("split", "n_runs", 10)),
            seed=int(get("split", "seed", 0)),
            grid=grid,
            tuning_metric=get("model", "tuning_metric", "auroc"),
            scale=_bool(get("model", "scale", "true")),
            calibration_bins=int(get("evaluate", "calibration_bins", 10)),
            review_k=int(get("review", "k", 200)),
            review_m=int(get("review", "m", 20)),
            review_runs=int(get("review", "runs", 3)),
            thresholds=thresholds,
            strict=_bool(get("run", "strict", "false")),
            threads=int(get("run", "threads", 1)),
        )
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
