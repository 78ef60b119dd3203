import numpy as np
import pytest

from smartreflex.catalog import CBC_CODES, FERRITIN
from smartreflex.cohort import LabelPolicy, build_cohort
from smartreflex.errors import ConfigError
from smartreflex.ingest import load_dataset, validate_dataset
from smartreflex.synth import GroundTruth, SynthConfig, bayes_auc, generate, write_synth


def test_config_validation_and_mapping(tmp_path):
    with pytest.raises(ConfigError):
        SynthConfig(target_rate=1.5)
    with pytest.raises(ConfigError):
        SynthConfig.from_mapping({"nonsense": "1"})
    cfg = SynthConfig.from_mapping({"n_patients": "10", "mcar_mode": "yes", "study_end": "2019-06-30"})
    assert cfg.n_patients == 10 and cfg.mcar_mode and cfg.study_end.month == 6
    p = tmp_path / "c.ini"
    p.write_text("[synth]\nseed = 4\n")
    assert SynthConfig.from_file(p).seed == 4


def test_generated_cohort_matches_truth(small_synth):
    ds = validate_dataset(small_synth.patients, small_synth.labs)
    assert not ds.warnings
    cfg = small_synth.config
    cohort = build_cohort(ds, (cfg.study_start, cfg.study_end))
    truth = small_synth.truth
    assert len(cohort) == len(truth.events)
    aligned = truth.aligned(cohort.event_ids)
    # planted pre-CBC orders are clinician orders the primary policy does not see
    expected = aligned["ordered"].to_numpy(dtype=bool) & ~aligned["pre_cbc_ferritin"].to_numpy(dtype=bool)
    np.testing.assert_array_equal(expected, cohort.labels)
    assert abs(cohort.labels.mean() - cfg.target_rate) < 0.03
    assert 0.7 < bayes_auc(aligned["true_prob"].to_numpy(), cohort.labels) < 0.9


def test_every_event_has_a_full_panel(small_synth):
    ds = validate_dataset(small_synth.patients, small_synth.labs)
    cfg = small_synth.config
    cohort = build_cohort(ds, (cfg.study_start, cfg.study_end))
    assert not cohort.table[list(CBC_CODES)].isna().any().any()


def test_refined_policy_flips_only_planted_events():
    data = generate(SynthConfig(n_patients=3000, seed=2, pre_cbc_fraction=0.01))
    ds = validate_dataset(data.patients, data.labs)
    window = (data.config.study_start, data.config.study_end)
    primary = build_cohort(ds, window)
    refined = primary.relabel(ds, LabelPolicy.refined())
    flipped = set(primary.event_ids[refined.labels & ~primary.labels])
    truth = data.truth.events
    planted = set(truth.loc[truth["pre_cbc_ferritin"], "event_id"])
    assert flipped == planted and len(planted) > 0


def test_deterministic_and_seed_sensitive():
    a = generate(SynthConfig(n_patients=200, seed=1))
    b = generate(SynthConfig(n_patients=200, seed=1))
    c = generate(SynthConfig(n_patients=200, seed=2))
    assert a.labs.equals(b.labs)
    assert not a.labs.equals(c.labs)


def test_files_round_trip(small_synth, small_synth_dir):
    ds, rep = load_dataset(small_synth_dir / "patients.csv", small_synth_dir / "labs.csv")
    assert rep.rows_rejected == 0
    assert ds.results.equals(small_synth.labs)
    truth = GroundTruth.read(small_synth_dir)
    assert truth.metadata["n_events"] == len(small_synth.truth.events)
    assert set(truth.events.columns) >= {"event_id", "true_prob", "iron_deficient", "pre_cbc_ferritin"}


def test_mcar_ferritin_lowness_is_independent_of_probability():
    data = generate(SynthConfig(n_patients=4000, seed=3, mcar_mode=True))
    ev = data.truth.events
    ordered = ev[ev["ordered"]]
    assert len(ordered) > 300
    ferr = data.labs.for_analyte(FERRITIN)
    assert len(ferr) > 0
