"""Event-log parsing, app catalog loading and foreground/background pairing.

Events are held column-wise (numpy arrays sorted by participant then time)
because a cohort easily reaches a million records; ``UsageEvent`` and
``UsageInterval`` are the per-record views handed out on request.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping, NamedTuple

import numpy as np
import polars as pl

from .errors import DataError, DuplicatePackage, MalformedEvent, ReservedCategory

WEEK_MS = 7 * 24 * 3600 * 1000
SMARTPHONE = "Smartphone"
UNKNOWN = "Unknown"


class EventKind(str, Enum):
    FOREGROUND = "FG"
    BACKGROUND = "BG"


class UsageEvent(NamedTuple):
    participant_id: str
    package: str
    kind: EventKind
    timestamp_ms: int


class UsageInterval(NamedTuple):
    participant_id: str
    package: str
    start_ms: int
    end_ms: int
    local_offset_min: int = 0

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class CohortManifest:
    window_end_ms: int
    offsets_min: Mapping[str, int] = field(default_factory=dict)
    weekend_days: frozenset[int] = frozenset({5, 6})

    def __post_init__(self):
        days = frozenset(int(d) for d in self.weekend_days)
        if not days or not days < frozenset(range(7)):
            raise DataError("weekend_days must be a non-empty strict subset of 0..6")
        object.__setattr__(self, "weekend_days", days)

    @property
    def window_start_ms(self) -> int:
        return self.window_end_ms - WEEK_MS

    def offset(self, pid: str) -> int:
        return int(self.offsets_min.get(pid, 0))

    @classmethod
    def from_json(cls, obj: Mapping | str | bytes) -> "CohortManifest":
        if isinstance(obj, (str, bytes)):
            obj = json.loads(obj)
        participants = obj.get("participants", {})
        return cls(
            window_end_ms=int(obj["window_end_ms"]),
            offsets_min={pid: int(p.get("offset_min", 0)) for pid, p in participants.items()},
            weekend_days=frozenset(obj.get("weekend_days", (5, 6))),
        )

    def to_json(self) -> dict:
        return {
            "window_end_ms": self.window_end_ms,
            "weekend_days": sorted(self.weekend_days),
            "participants": {pid: {"offset_min": off} for pid, off in sorted(self.offsets_min.items())},
        }


class AppCatalog:
    """package -> category lookup; unmapped packages resolve to ``Unknown``."""

    def __init__(self, mapping: Mapping[str, str] | None = None):
        self._map: dict[str, str] = {}
        for pkg, cat in (mapping or {}).items():
            if cat == SMARTPHONE:
                raise ReservedCategory(pkg)
            self._map[pkg] = cat

    def lookup(self, package: str) -> str:
        return self._map.get(package, UNKNOWN)

    def __len__(self):
        return len(self._map)

    def __contains__(self, package):
        return package in self._map

    def items(self):
        return self._map.items()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["package", "category"])
        for pkg in sorted(self._map):
            w.writerow([pkg, self._map[pkg]])
        return buf.getvalue()


def load_catalog(stream: IO | str | bytes) -> AppCatalog:
    text = _read_text(stream)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return AppCatalog()
    if [h.strip().lstrip("﻿") for h in header] != ["package", "category"]:
        raise DataError(f"catalog header must be 'package,category', got {header!r}")
    mapping: dict[str, str] = {}
    for row in reader:
        if not row or not any(c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DataError(f"catalog row must have 2 fields: {row!r}")
        pkg, cat = row[0].strip(), row[1].strip()
        if pkg in mapping:
            raise DuplicatePackage(pkg)
        if cat == SMARTPHONE:
            raise ReservedCategory(pkg)
        mapping[pkg] = cat
    return AppCatalog(mapping)


def _read_text(stream) -> str:
    if isinstance(stream, bytes):
        return stream.decode("utf-8")
    if isinstance(stream, str):
        return stream
    data = stream.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


@dataclass
class IngestReport:
    lines: int = 0
    dropped_outside_window: int = 0
    carried_in: int = 0
    orphan_backgrounds: int = 0
    truncated_at_window_end: int = 0
    zero_length: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EventLog:
    """Window-clipped events, sorted by (participant, timestamp) stably."""

    participants: list[str]
    packages: list[str]
    pid: np.ndarray
    pkg: np.ndarray
    is_fg: np.ndarray
    ts: np.ndarray
    report: IngestReport = field(default_factory=IngestReport)

    def __len__(self):
        return len(self.ts)

    def events(self, participant_id: str | None = None) -> list[UsageEvent]:
        rows = range(len(self.ts))
        if participant_id is not None:
            code = self.participants.index(participant_id)
            rows = np.flatnonzero(self.pid == code)
        fg, bg = EventKind.FOREGROUND, EventKind.BACKGROUND
        return [
            UsageEvent(self.participants[self.pid[i]], self.packages[self.pkg[i]],
                       fg if self.is_fg[i] else bg, int(self.ts[i]))
            for i in rows
        ]

    def by_participant(self) -> dict[str, list[UsageEvent]]:
        out = {p: [] for p in self.participants}
        for ev in self.events():
            out[ev.participant_id].append(ev)
        return out

    @classmethod
    def from_events(cls, events: Iterable[UsageEvent], participants: Iterable[str] = ()) -> "EventLog":
        events = list(events)
        pids = sorted(set(participants) | {e.participant_id for e in events})
        pid_code = {p: i for i, p in enumerate(pids)}
        pkg_code: dict[str, int] = {}
        rows = [(pid_code[e.participant_id], pkg_code.setdefault(e.package, len(pkg_code)),
                 EventKind(e.kind) is EventKind.FOREGROUND, int(e.timestamp_ms)) for e in events]
        return _assemble(pids, list(pkg_code), rows, IngestReport(lines=len(rows)))


_CANONICAL = (
    r'^\{"pid": "(?P<pid>[^"\\\x00-\x1f]*)", "pkg": "(?P<pkg>[^"\\\x00-\x1f]+)", '
    r'"ev": "(?P<ev>FG|BG)", "ts": (?P<ts>-?(?:0|[1-9][0-9]{0,17}))\}$'
)


def _parse_line(line: str, line_no: int) -> tuple[str, str, str, int]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedEvent(line_no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise MalformedEvent(line_no, "record is not an object")
    pid, pkg, ev, ts = obj.get("pid"), obj.get("pkg"), obj.get("ev"), obj.get("ts")
    if not isinstance(pid, str):
        raise MalformedEvent(line_no, "pid must be a string")
    if not isinstance(pkg, str) or not pkg:
        raise MalformedEvent(line_no, "pkg must be a non-empty string")
    if ev not in ("FG", "BG"):
        raise MalformedEvent(line_no, f"unknown event kind {ev!r}")
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise MalformedEvent(line_no, "ts must be an integer")
    if not -(2**63) <= ts < 2**63:
        raise MalformedEvent(line_no, "ts out of 64-bit range")
    return pid, pkg, ev, ts


class _Columns(NamedTuple):
    pid_names: list[str]
    pid: np.ndarray
    pkg_names: list[str]
    pkg: np.ndarray
    is_fg: np.ndarray
    ts: np.ndarray


def _factorize(col: pl.Series) -> tuple[list[str], np.ndarray]:
    uniq = col.unique(maintain_order=True)
    codes = col.cast(pl.Enum(uniq)).to_physical().to_numpy().astype(np.int64)
    return uniq.to_list(), codes


def _fast_columns(raw: bytes) -> _Columns | None:
    """Columnar parse of canonically formatted input (as written by ``json.dumps``).

    Returns None when any line deviates, leaving the strict path to either
    accept it or report the offending line.
    """
    if not raw.strip():
        return None
    try:
        lines = pl.read_csv(io.BytesIO(raw), has_header=False, separator="\x1f", quote_char=None,
                            new_columns=["line"], schema={"line": pl.String})
        groups = lines.select(pl.col("line").str.extract_groups(_CANONICAL).alias("g")).unnest("g")
    except Exception:
        return None
    if lines.height != raw.count(b"\n") + (0 if raw.endswith(b"\n") else 1):
        return None
    if any(groups.null_count().row(0)):
        return None
    pid_names, pid = _factorize(groups["pid"])
    pkg_names, pkg = _factorize(groups["pkg"])
    return _Columns(pid_names, pid, pkg_names, pkg, (groups["ev"] == "FG").to_numpy(),
                    groups["ts"].cast(pl.Int64).to_numpy())


def _strict_columns(text: str) -> _Columns:
    pid_code: dict[str, int] = {}
    pkg_code: dict[str, int] = {}
    pid, pkg, fg, ts = [], [], [], []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        p, k, e, t = _parse_line(line, line_no)
        pid.append(pid_code.setdefault(p, len(pid_code)))
        pkg.append(pkg_code.setdefault(k, len(pkg_code)))
        fg.append(e == "FG")
        ts.append(t)
    return _Columns(list(pid_code), np.array(pid, np.int64), list(pkg_code), np.array(pkg, np.int64),
                    np.array(fg, bool), np.array(ts, np.int64))


def parse_events(stream: IO | str | bytes, manifest: CohortManifest) -> EventLog:
    """Parse an events stream and clip it to the manifest's 7-day window.

    Events after the window end or before its start are dropped and counted.
    An app still open at the window start (according to the pre-window
    events) is carried in as a foreground event at the window start.
    """
    raw = stream if isinstance(stream, (str, bytes)) else stream.read()
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    cols = _fast_columns(raw)
    if cols is None:
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedEvent(raw[: exc.start].count(b"\n") + 1, "invalid UTF-8") from None
        cols = _strict_columns(text)
    report = IngestReport(lines=len(cols.ts))
    lo, hi = manifest.window_start_ms, manifest.window_end_ms
    pid_arr, pkg_arr, fg, ts = cols.pid, cols.pkg, cols.is_fg, cols.ts

    inside = (ts >= lo) & (ts <= hi)
    report.dropped_outside_window = int((~inside).sum())
    before = np.flatnonzero(ts < lo)
    carry: list[tuple[int, int]] = []
    if len(before):
        order = before[np.lexsort((ts[before], pid_arr[before]))]
        open_pkg: dict[int, int | None] = {}
        for i in order:
            p = int(pid_arr[i])
            if fg[i]:
                open_pkg[p] = int(pkg_arr[i])
            elif open_pkg.get(p) == int(pkg_arr[i]):
                open_pkg[p] = None
        carry = [(p, k) for p, k in open_pkg.items() if k is not None]
        report.carried_in = len(carry)

    # Re-code participants in sorted order (manifest participants included).
    names = sorted(set(cols.pid_names) | set(manifest.offsets_min))
    rank = {p: i for i, p in enumerate(names)}
    remap = np.array([rank[p] for p in cols.pid_names] or [0], dtype=np.int64)
    keep = np.flatnonzero(inside)
    pid_k = remap[pid_arr[keep]]
    pkg_k, fg_k, ts_k = pkg_arr[keep], fg[keep], ts[keep]
    if carry:
        # Carried-in events precede any in-window event at the same instant.
        c_pid = remap[np.array([p for p, _ in carry], dtype=np.int64)]
        pid_k = np.concatenate([c_pid, pid_k])
        pkg_k = np.concatenate([np.array([k for _, k in carry], dtype=np.int64), pkg_k])
        fg_k = np.concatenate([np.ones(len(carry), bool), fg_k])
        ts_k = np.concatenate([np.full(len(carry), lo, np.int64), ts_k])
    order = np.lexsort((ts_k, pid_k))
    return EventLog(names, list(cols.pkg_names), pid_k[order], pkg_k[order], fg_k[order], ts_k[order], report)


def _assemble(pids, packages, rows, report) -> EventLog:
    if rows:
        p, k, f, t = (np.array(c) for c in zip(*rows))
    else:
        p = k = t = np.zeros(0, np.int64)
        f = np.zeros(0, bool)
    order = np.lexsort((t, p))
    return EventLog(pids, packages, p[order].astype(np.int64), k[order].astype(np.int64),
                    f[order].astype(bool), t[order].astype(np.int64), report)


@dataclass
class IntervalTable:
    """Per-participant non-overlapping usage spans, sorted by (participant, start)."""

    participants: list[str]
    packages: list[str]
    pid: np.ndarray
    pkg: np.ndarray
    start: np.ndarray
    end: np.ndarray
    offsets_min: np.ndarray
    report: IngestReport = field(default_factory=IngestReport)

    def __len__(self):
        return len(self.start)

    @property
    def duration(self) -> np.ndarray:
        return self.end - self.start

    def rows_of(self, participant_id: str) -> slice:
        code = self.participants.index(participant_id)
        lo, hi = np.searchsorted(self.pid, [code, code + 1])
        return slice(int(lo), int(hi))

    def intervals(self, participant_id: str | None = None) -> list[UsageInterval]:
        rows = range(len(self.start)) if participant_id is None else range(*self.rows_of(participant_id).indices(len(self.start)))
        return [
            UsageInterval(self.participants[self.pid[i]], self.packages[self.pkg[i]],
                          int(self.start[i]), int(self.end[i]), int(self.offsets_min[self.pid[i]]))
            for i in rows
        ]

    @classmethod
    def from_intervals(cls, intervals: Iterable[UsageInterval], participants: Iterable[str] = ()) -> "IntervalTable":
        intervals = list(intervals)
        names = sorted(set(participants) | {iv.participant_id for iv in intervals})
        code = {p: i for i, p in enumerate(names)}
        pkg_code: dict[str, int] = {}
        offsets = np.zeros(len(names), np.int64)
        for iv in intervals:
            offsets[code[iv.participant_id]] = iv.local_offset_min
        pid = np.array([code[iv.participant_id] for iv in intervals], np.int64)
        pkg = np.array([pkg_code.setdefault(iv.package, len(pkg_code)) for iv in intervals], np.int64)
        start = np.array([iv.start_ms for iv in intervals], np.int64)
        end = np.array([iv.end_ms for iv in intervals], np.int64)
        order = np.lexsort((start, pid))
        return cls(names, list(pkg_code), pid[order], pkg[order], start[order], end[order], offsets)


def build_intervals(log: EventLog | Iterable[UsageEvent], manifest: CohortManifest) -> IntervalTable:
    """Pair foreground/background events into non-overlapping intervals.

    Per participant, in time order: a foreground event opens an interval that
    closes at the next background event of the same package or at the next
    foreground event of any package, whichever comes first; unmatched
    background events are ignored (counted); intervals open at the end are
    truncated to the window end; zero-length intervals are discarded.
    """
    if not isinstance(log, EventLog):
        log = EventLog.from_events(log, manifest.offsets_min)
    report = IngestReport(**log.report.as_dict())
    n = len(log)
    pid, pkg, is_fg, ts = log.pid, log.pkg, log.is_fg, log.ts
    fg_pos = np.flatnonzero(is_fg)
    # Segment = index (into fg_pos) of the latest foreground at or before each event.
    seg = np.cumsum(is_fg) - 1
    bg_pos = np.flatnonzero(~is_fg)
    bg_seg = seg[bg_pos]
    valid = bg_seg >= 0
    valid[valid] &= pid[fg_pos[bg_seg[valid]]] == pid[bg_pos[valid]]
    valid[valid] &= pkg[fg_pos[bg_seg[valid]]] == pkg[bg_pos[valid]]
    closing_bg = bg_pos[valid]
    closing_seg = bg_seg[valid]
    # First matching background per segment closes it; later ones are orphans.
    first_seg, first_idx = np.unique(closing_seg, return_index=True)
    report.orphan_backgrounds = int(len(bg_pos) - len(first_seg))

    end = np.full(len(fg_pos), -1, np.int64)
    end[first_seg] = ts[closing_bg[first_idx]]
    nxt = np.empty(len(fg_pos), np.int64)
    if len(fg_pos):
        nxt[:-1] = fg_pos[1:]
        nxt[-1] = n
    same_pid_next = nxt < n
    same_pid_next[same_pid_next] = pid[nxt[same_pid_next]] == pid[fg_pos[same_pid_next]]
    need = end < 0
    by_fg = need & same_pid_next
    end[by_fg] = ts[nxt[by_fg]]
    trunc = need & ~same_pid_next
    end[trunc] = manifest.window_end_ms
    start = ts[fg_pos]
    end = np.minimum(end, manifest.window_end_ms)
    report.truncated_at_window_end = int(trunc.sum())
    positive = end > start
    report.zero_length = int((~positive).sum())
    keep = fg_pos[positive]
    offsets = np.array([manifest.offset(p) for p in log.participants], np.int64)
    return IntervalTable(list(log.participants), list(log.packages), pid[keep], pkg[keep],
                         start[positive], end[positive], offsets, report)


def ingest(events: IO | str | bytes, manifest: CohortManifest) -> IntervalTable:
    return build_intervals(parse_events(events, manifest), manifest)
