import numpy as np
import pytest
from scipy import stats

from appscreen.cohort import (STRONG_EFFECTS, Effect, SynthConfig, classes, load_labels, null_generate,
                              score_phq9, synth_generate)
from appscreen.errors import ConfigError, DataError, ItemOutOfRange
from appscreen.features import cohort_features
from appscreen.ingest import WEEK_MS, build_intervals, load_catalog, parse_events
from appscreen.sessions import session_table

PLANTED_COLUMNS = ("Weekday_Education_Duration_24_Hour", "Weekend_Photo_Video_Num_of_Apps_24_Hour")


def raw_matrix(cohort):
    iv = build_intervals(parse_events(cohort.events, cohort.manifest), cohort.manifest)
    return cohort_features(iv, cohort.catalog, cohort.manifest).unlabeled_matrix()


def test_phq9_scoring():
    assert score_phq9([0] * 9) == (0, False)
    assert score_phq9([3, 3, 2, 1, 1, 0, 0, 0, 0]) == (10, True)
    assert score_phq9([3, 3, 2, 1, 0, 0, 0, 0, 0]) == (9, False)
    assert score_phq9([3] * 9) == (27, True)


@pytest.mark.parametrize("items", [[4] + [0] * 8, [-1] + [0] * 8, [0] * 8, [0.5] + [0] * 8, [True] + [0] * 8])
def test_phq9_rejects_bad_items(items):
    with pytest.raises(ItemOutOfRange):
        score_phq9(items)


def test_labels_file_round_trip():
    c = synth_generate(SynthConfig(n=25, seed=1, events_per_participant=50))
    records = load_labels(c.files()["labels.csv"])
    assert classes(records) == c.classes
    with pytest.raises(DataError):
        load_labels("pid,a\nx,1\n")


def test_class_balance_and_config_validation():
    c = synth_generate(SynthConfig(n=100, seed=0, events_per_participant=50))
    assert sum(c.classes.values()) == 51
    with pytest.raises(ConfigError):
        SynthConfig(n=24)
    with pytest.raises(ConfigError):
        Effect("Weekday", "Nope", "Duration", 10)
    with pytest.raises(ConfigError):
        Effect("Weekday", "Education", "Duration", -1000)


def test_byte_determinism_per_seed():
    a = synth_generate(SynthConfig(n=30, seed=7, events_per_participant=500)).files()
    b = synth_generate(SynthConfig(n=30, seed=7, events_per_participant=500)).files()
    c = synth_generate(SynthConfig(n=30, seed=8, events_per_participant=500)).files()
    assert a == b
    assert a["events.jsonl"] != c["events.jsonl"]


def test_generated_cohort_passes_pipeline_invariants():
    c = synth_generate(SynthConfig(n=30, seed=3))
    files = c.files()
    catalog = load_catalog(files["catalog.csv"])
    assert "Smartphone" not in {cat for _, cat in catalog.items()}
    log = parse_events(files["events.jsonl"], c.manifest)
    assert log.report.dropped_outside_window == 0
    assert 6000 <= len(log) / 30 <= 10000        # around 8,000 events per participant
    table = build_intervals(log, c.manifest)
    for p in table.participants:
        rows = table.rows_of(p)
        s, e = table.start[rows], table.end[rows]
        assert np.all(e > s) and np.all(s[1:] >= e[:-1])
        assert (e - s).sum() <= WEEK_MS
    st = session_table(table)
    assert np.array_equal(np.sort(np.concatenate([np.arange(a, b + 1) for a, b in zip(st.first, st.last)])),
                          np.arange(len(table)))


def test_strong_effects_shift_planted_columns():
    for seed in range(3):
        c = synth_generate(SynthConfig(n=100, seed=seed, events_per_participant=2000))
        m = raw_matrix(c)
        y = np.array([c.classes[p] for p in m.participant_ids])
        edu, pv = (m.column(n) for n in PLANTED_COLUMNS)
        assert edu[y == 1].mean() < edu[y == 0].mean()
        assert pv[y == 1].mean() > pv[y == 0].mean()
        assert stats.ttest_ind(edu[y == 1], edu[y == 0]).pvalue < 0.01
        assert stats.ttest_ind(pv[y == 1], pv[y == 0]).pvalue < 0.01


def test_null_mode_has_no_planted_difference():
    assert all(e.family for e in STRONG_EFFECTS)
    pvals = {n: [] for n in PLANTED_COLUMNS}
    for seed in range(20):
        c = null_generate(SynthConfig(n=100, seed=seed, events_per_participant=2000))
        m = raw_matrix(c)
        y = np.array([c.classes[p] for p in m.participant_ids])
        for n in PLANTED_COLUMNS:
            x = m.column(n)
            pvals[n].append(stats.ttest_ind(x[y == 1], x[y == 0]).pvalue)
    for n, ps in pvals.items():
        ps = np.array(ps)
        # at most the binomial(20, 0.01) 99.9% quantile of chance rejections
        assert (ps < 0.01).sum() <= int(stats.binom.ppf(0.999, 20, 0.01)), (n, ps)
        # combined over seeds (Fisher) the difference stays insignificant
        assert stats.combine_pvalues(ps).pvalue >= 0.01, (n, ps)
