"""Gap-based sessionization of usage intervals and session typing."""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import UnsortedInput
from .ingest import IntervalTable, UsageInterval

SESSION_GAP_MS = 45_000
MICRO_MAX_MS = 15_000
REVIEW_MAX_MS = 60_000


class SessionKind(str, Enum):
    MICRO = "Micro"
    REVIEW = "Review"
    ENGAGE = "Engage"


KIND_ORDER = (SessionKind.MICRO, SessionKind.REVIEW, SessionKind.ENGAGE)


@dataclass(frozen=True)
class Session:
    participant_id: str
    start_ms: int
    end_ms: int
    members: tuple[int, ...]
    active_duration_ms: int
    kind: SessionKind


def classify_session(session: Session | int) -> SessionKind:
    d = session if isinstance(session, (int, np.integer)) else session.active_duration_ms
    if d <= MICRO_MAX_MS:
        return SessionKind.MICRO
    if d <= REVIEW_MAX_MS:
        return SessionKind.REVIEW
    return SessionKind.ENGAGE


def kind_codes(active_ms: np.ndarray) -> np.ndarray:
    """Vectorized ``classify_session``: 0 micro, 1 review, 2 engage."""
    return (active_ms > MICRO_MAX_MS).astype(np.int8) + (active_ms > REVIEW_MAX_MS).astype(np.int8)


def _session_starts(pid: np.ndarray, start: np.ndarray, end: np.ndarray, gap_ms: int) -> np.ndarray:
    if len(start) == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(end <= start):
        raise UnsortedInput("interval with end <= start")
    same = pid[1:] == pid[:-1]
    if np.any(pid[1:] < pid[:-1]):
        raise UnsortedInput("intervals not grouped by participant")
    gaps = start[1:] - end[:-1]
    if np.any(same & (gaps < 0)):
        raise UnsortedInput("intervals overlap or are out of time order")
    new = np.ones(len(start), dtype=bool)
    new[1:] = ~same | (gaps > gap_ms)
    return np.flatnonzero(new)


@dataclass
class SessionTable:
    """Column-wise sessions; ``first``/``last`` index the source interval rows."""

    pid: np.ndarray
    first: np.ndarray
    last: np.ndarray
    start: np.ndarray
    end: np.ndarray
    active_ms: np.ndarray
    kind: np.ndarray

    def __len__(self):
        return len(self.first)


def session_table(table: IntervalTable, gap_ms: int = SESSION_GAP_MS) -> SessionTable:
    heads = _session_starts(table.pid, table.start, table.end, gap_ms)
    tails = np.append(heads[1:], len(table.start)) - 1
    active = np.add.reduceat(table.duration, heads) if len(heads) else np.zeros(0, np.int64)
    return SessionTable(table.pid[heads], heads, tails, table.start[heads], table.end[tails],
                        active.astype(np.int64), kind_codes(active))


def sessionize(intervals: Sequence[UsageInterval] | IntervalTable, gap_ms: int = SESSION_GAP_MS) -> list[Session]:
    """Group intervals separated by at most ``gap_ms`` into sessions.

    The gap runs from one interval's end to the next one's start and the
    boundary is inclusive. Member indices refer to positions in the input.
    """
    if isinstance(intervals, IntervalTable):
        table = intervals
        names = table.participants
    else:
        names = []
        seen: dict[str, int] = {}
        for iv in intervals:
            if iv.participant_id not in seen:
                seen[iv.participant_id] = len(names)
                names.append(iv.participant_id)
        pid = np.array([seen[iv.participant_id] for iv in intervals], dtype=np.int64)
        start = np.array([iv.start_ms for iv in intervals], dtype=np.int64)
        end = np.array([iv.end_ms for iv in intervals], dtype=np.int64)
        table = IntervalTable(names, [], pid, np.zeros(len(pid), np.int64), start, end, np.zeros(len(names), np.int64))
    st = session_table(table, gap_ms)
    return [
        Session(names[st.pid[i]], int(st.start[i]), int(st.end[i]),
                tuple(range(int(st.first[i]), int(st.last[i]) + 1)), int(st.active_ms[i]),
                KIND_ORDER[st.kind[i]])
        for i in range(len(st))
    ]


def dump_sessions(sessions: Sequence[Session]) -> str:
    """JSON-lines debug dump."""
    return "".join(
        json.dumps({"pid": s.participant_id, "start_ms": s.start_ms, "end_ms": s.end_ms,
                    "members": list(s.members), "active_ms": s.active_duration_ms,
                    "kind": s.kind.value}) + "\n"
        for s in sessions
    )
