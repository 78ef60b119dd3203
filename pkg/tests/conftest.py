import io
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from smartreflex.catalog import Gender, LabResult, Patient
from smartreflex.ingest import LabTable, validate_dataset
from smartreflex.synth import SynthConfig, generate

UTC = timezone.utc


def ts(*args):
    return datetime(*args, tzinfo=UTC)


def make_dataset(patients, results):
    return validate_dataset(patients, LabTable.from_records(results))


@pytest.fixture
def tiny_dataset():
    """Two patients with a hand-written lab history."""
    p1 = Patient("p1", Gender.FEMALE, date(1970, 5, 1))
    p2 = Patient("p2", Gender.MALE, date(1950, 1, 1))
    t = ts(2019, 3, 10, 9, 0)
    rows = [
        # p1: one CBC in the study window, ferritin 5 days later
        LabResult("p1", "HCT", 33.0, t),
        LabResult("p1", "MCV", 76.0, t),
        LabResult("p1", "RDW", 15.2, t),
        LabResult("p1", "HGB", 11.0, t),
        LabResult("p1", "FERRITIN", 6.0, t + timedelta(days=5)),
        LabResult("p1", "FERRITIN", 20.0, t - timedelta(days=200)),
        LabResult("p1", "NA", 139.0, t - timedelta(days=100)),
        LabResult("p1", "NA", 141.0, t - timedelta(days=40)),
        LabResult("p1", "NA", 150.0, t - timedelta(days=10)),   # inside the 30-day gap
        # p2: two CBCs, no ferritin
        LabResult("p2", "HCT", 45.0, ts(2019, 6, 1, 8)),
        LabResult("p2", "MCV", 91.0, ts(2019, 6, 1, 8)),
        LabResult("p2", "HCT", 40.0, ts(2019, 9, 1, 8)),
        LabResult("p2", "RDW", 13.0, ts(2019, 8, 20, 8)),        # backfilled into the 9/1 event
    ]
    return make_dataset([p1, p2], rows)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(n_patients=1500, seed=5))


@pytest.fixture(scope="session")
def small_synth_dir(tmp_path_factory, small_synth):
    from smartreflex.synth import write_synth
    d = tmp_path_factory.mktemp("synth")
    write_synth(small_synth, d)
    return d


@pytest.fixture
def csv_text():
    def make(header, rows):
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for r in rows:
            buf.write(",".join(r) + "\n")
        buf.seek(0)
        return buf
    return make


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


class _Criterion:
    def __init__(self, number, title, sink):
        self.number, self.title, self.sink = number, title, sink
        self.checks = []

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        failed = [c for c in self.checks if not c[1]]
        ok = exc_type is None and not failed and bool(self.checks)
        parts = [f"{n}{' ' + d if d else ''}{'' if good else ' [FAIL]'}" for n, good, d in self.checks]
        if exc_type is not None:
            parts.append(f"error: {exc_type.__name__}: {exc}")
        line = f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}: " + "; ".join(parts)
        self.sink[self.number] = line
        print(line)
        if exc_type is None:
            assert not failed, line
        return False


@pytest.fixture
def criterion(request):
    sink = request.config.stash[_ACCEPTANCE]
    return lambda number, title: _Criterion(number, title, sink)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
