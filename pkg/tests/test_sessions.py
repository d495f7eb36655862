import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from appscreen.errors import UnsortedInput
from appscreen.ingest import UsageInterval
from appscreen.sessions import SessionKind, classify_session, dump_sessions, sessionize


def iv(a, b, pid="u"):
    return UsageInterval(pid, "app", a, b)


def brute_force_groups(intervals, gap):
    """Transitive closure of the 'gap <= limit' relation via union-find."""
    parent = list(range(len(intervals)))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in range(len(intervals)):
        for j in range(i + 1, len(intervals)):
            a, b = intervals[i], intervals[j]
            if a.participant_id == b.participant_id:
                g = max(b.start_ms - a.end_ms, a.start_ms - b.end_ms)
                if g <= gap:
                    parent[find(j)] = find(i)
    groups = {}
    for i in range(len(intervals)):
        groups.setdefault(find(i), []).append(i)
    return sorted(tuple(g) for g in groups.values())


def random_stream(rng, n):
    gaps = rng.choice([0, 1_000, 30_000, 44_999, 45_000, 45_001, 90_000, 600_000], size=n)
    lengths = rng.integers(1, 120_000, size=n)
    t, out = 0, []
    for g, L in zip(gaps, lengths):
        t += int(g)
        out.append(iv(t, t + int(L)))
        t += int(L)
    return out


def test_gap_30s_one_session():
    assert len(sessionize([iv(0, 10_000), iv(40_000, 50_000)])) == 1


def test_gap_46001ms_two_sessions():
    assert len(sessionize([iv(0, 10_000), iv(56_001, 60_000)])) == 2


def test_gap_exactly_45s_inclusive():
    assert len(sessionize([iv(0, 10_000), iv(55_000, 60_000)])) == 1


@pytest.mark.parametrize("d,kind", [(0, "Micro"), (10_000, "Micro"), (15_000, "Micro"), (15_001, "Review"),
                                    (60_000, "Review"), (60_001, "Engage"), (61_000, "Engage")])
def test_classify_boundaries(d, kind):
    assert classify_session(d) == SessionKind(kind)


def test_active_duration_excludes_gaps():
    (s,) = sessionize([iv(0, 10_000), iv(40_000, 46_000)])
    assert s.active_duration_ms == 16_000
    assert s.kind is SessionKind.REVIEW
    assert (s.start_ms, s.end_ms, s.members) == (0, 46_000, (0, 1))


def test_sessions_split_per_participant():
    got = sessionize([iv(0, 10, "a"), iv(20, 30, "b")])
    assert [s.participant_id for s in got] == ["a", "b"]


def test_unsorted_input_rejected():
    with pytest.raises(UnsortedInput):
        sessionize([iv(100, 200), iv(0, 50)])
    with pytest.raises(UnsortedInput):
        sessionize([iv(0, 100), iv(50, 150)])


def test_oracle_equivalence_fixed_seeds():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        stream = random_stream(rng, int(rng.integers(1, 120)))
        got = sorted(s.members for s in sessionize(stream))
        assert got == brute_force_groups(stream, 45_000)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 100_000), st.integers(0, 100_000))
def test_gap_monotonicity(seed, g1, g2):
    stream = random_stream(np.random.default_rng(seed), 40)
    lo, hi = sorted((g1, g2))
    assert len(sessionize(stream, hi)) <= len(sessionize(stream, lo))


def test_partition_and_kind_counts():
    stream = random_stream(np.random.default_rng(3), 500)
    sessions = sessionize(stream)
    members = [m for s in sessions for m in s.members]
    assert members == list(range(len(stream)))
    kinds = [s.kind for s in sessions]
    assert sum(kinds.count(k) for k in SessionKind) == len(sessions)
    for s in sessions:
        assert s.kind == classify_session(s.active_duration_ms)


def test_debug_dump_is_json_lines():
    text = dump_sessions(sessionize([iv(0, 10), iv(100_000, 100_020)]))
    assert text.count("\n") == 2 and '"kind": "Micro"' in text
