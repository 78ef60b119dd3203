import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartreflex.errors import InsufficientPatients
from smartreflex.learn.split import SplitPlan, partition_sizes, split_monte_carlo


def test_partition_sizes():
    assert partition_sizes(100, (0.8, 0.1, 0.1)) == (80, 10, 10)
    assert sum(partition_sizes(47, (0.8, 0.1, 0.1))) == 47


def test_plan_is_grouped_and_deterministic():
    pids = np.array([f"p{i % 30}" for i in range(200)])
    plan = split_monte_carlo(pids, n_runs=4, seed=3)
    again = split_monte_carlo(pids[::-1], n_runs=4, seed=3)
    assert plan.to_dict() == again.to_dict()
    for run in range(4):
        part = plan.partition(run, pids)
        for pid in set(pids):
            assert len(set(part[pids == pid])) == 1
        sets = [plan.patients(run, n) for n in ("train", "tune", "test")]
        assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
        assert set.union(*sets) == set(pids)
    assert plan.patients(0, "test") != plan.patients(1, "test")
    assert split_monte_carlo(pids, n_runs=4, seed=4).to_dict() != plan.to_dict()


def test_too_few_patients():
    with pytest.raises(InsufficientPatients):
        split_monte_carlo(["a", "b", "c"], n_runs=1)


def test_save_load(tmp_path):
    plan = split_monte_carlo([f"p{i}" for i in range(50)], n_runs=2, seed=0)
    plan.save(tmp_path / "s.json")
    assert SplitPlan.load(tmp_path / "s.json").to_dict() == plan.to_dict()


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 300), st.integers(0, 1000),
       st.tuples(st.integers(1, 10), st.integers(1, 10), st.integers(1, 10)))
def test_every_patient_in_exactly_one_partition(n, seed, parts):
    ratios = tuple(p / sum(parts) for p in parts)
    pids = [f"x{i}" for i in range(n)]
    plan = split_monte_carlo(pids, n_runs=2, ratios=ratios, seed=seed)
    for run in range(2):
        m = plan.masks(run, np.array(pids))
        total = m["train"].astype(int) + m["tune"] + m["test"]
        assert np.all(total == 1)
