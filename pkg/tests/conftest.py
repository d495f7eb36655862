import warnings

import pytest

from appscreen.cohort import SynthConfig, null_generate, synth_generate
from appscreen.features import cohort_features
from appscreen.ingest import build_intervals, parse_events


def featurize(cohort, min_user_fraction=0.5):
    iv = build_intervals(parse_events(cohort.events, cohort.manifest), cohort.manifest)
    return cohort_features(iv, cohort.catalog, cohort.manifest).filtered(min_user_fraction)


@pytest.fixture(scope="session")
def small_planted():
    """30 participants, light event volume; shared by the pipeline tests."""
    c = synth_generate(SynthConfig(n=30, seed=11, events_per_participant=1500))
    return c, featurize(c)


@pytest.fixture(scope="session")
def small_null():
    c = null_generate(SynthConfig(n=30, seed=12, events_per_participant=1500))
    return c, featurize(c)


@pytest.fixture(autouse=True)
def _quiet_fold_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="inner CV reduced")
        yield


_ACCEPTANCE: list[str] = []


def record_acceptance(criterion, passed: bool, detail: str, seconds: float) -> None:
    _ACCEPTANCE.append(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}  [{seconds:.1f} s]")
    print(_ACCEPTANCE[-1])


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
