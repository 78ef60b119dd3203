from datetime import date
from pathlib import Path

import pytest

from smartreflex.cohort import LabelMode
from smartreflex.config import GridSpec, load_config, parse_ratios
from smartreflex.errors import ConfigError
from smartreflex.evaluate.analysis import ReflexMode
from smartreflex.learn.forest import ForestParams


def test_parse_ratios():
    assert parse_ratios("80:10:10") == pytest.approx((0.8, 0.1, 0.1))
    assert parse_ratios("0.6,0.2,0.2") == pytest.approx((0.6, 0.2, 0.2))
    for bad in ("80:20", "a:b:c", "80:0:20"):
        with pytest.raises(ConfigError):
            parse_ratios(bad)


def test_defaults():
    cfg = load_config()
    assert cfg.uses_synth and cfg.n_runs == 10 and cfg.ratios == pytest.approx((0.8, 0.1, 0.1))
    assert len(cfg.grid.configs()) == 22
    assert cfg.thresholds[ReflexMode.VARIATION2_ADD] == 0.52
    assert cfg.study_window == (date(2019, 1, 1), date(2019, 12, 31))


def test_file_and_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[paths]\nlabs = data/labs.csv\npatients = data/p.csv\noutput = out\n"
                 "[cohort]\npolicy = refined\n[model]\nforest_max_depth = 4 none\n"
                 "[split]\nn_runs = 3\n")
    cfg = load_config(p, {"split.n_runs": 5, "run.threads": None})
    assert cfg.labs == tmp_path / "data" / "labs.csv"
    assert cfg.policy is LabelMode.REFINED and cfg.n_runs == 5
    forests = [c for c in cfg.grid.configs() if isinstance(c, ForestParams)]
    assert {f.max_depth for f in forests} == {4, None}
    with pytest.raises(ConfigError):
        cfg.check_paths()


@pytest.mark.parametrize("text", [
    "[bogus]\na = 1\n", "[split]\nrunz = 3\n", "[split]\nn_runs = many\n",
    "[paths]\nlabs = x.csv\n", "[model]\ntuning_metric = accuracy\n", "not an ini",
])
def test_bad_configs(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config(Path("/nonexistent/c.ini"))


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    for p in root.glob("*.ini"):
        load_config(p)
