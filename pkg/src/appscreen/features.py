"""Behavioral feature space: diurnal splitting, entropy, hamming ratio,
the 864-column matrix, the prevalence filter and train-only scaling.

Column names follow ``<DayType>_<Category>_<Metric>_<Scope>[_<Stat>]``, e.g.
``Weekday_Smartphone_Entropy_24_Hour`` or ``Weekend_Photo_Video_Num_of_Apps_6_Hour_SD``.
"""
from __future__ import annotations

import datetime as dt
import io
import json
import math
import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, EmptyReferenceGroup, NegativeDuration, UnknownParticipant
from .ingest import SMARTPHONE, AppCatalog, CohortManifest, IntervalTable, UsageInterval
from .sessions import SESSION_GAP_MS, SessionTable, session_table

STANDARD_CATEGORIES = (
    "Art_Design", "Auto_Vehicles", "Beauty", "Books_Reference", "Browser", "Business",
    "Communication", "Dating", "Education", "Entertainment", "Finance", "Food_Drink",
    "Games", "Health_Fitness", "Lifestyle", "Maps_Navigation", "Medical", "Music_Audio",
    "News_Magazines", "Personalization", "Photo_Video", "Productivity", "Shopping",
    "Social", "Tools", "Travel_Local", "Weather",
)
CATEGORIES = STANDARD_CATEGORIES + (SMARTPHONE,)
DAY_TYPES = ("Weekday", "Weekend")
CORE_METRICS = ("Duration", "Launch", "Num_of_Apps", "Entropy", "Ratio_of_Hamming")
SESSION_METRICS = ("Session_Num", "Micro_Session_Num", "Review_Session_Num", "Engage_Session_Num")
SCOPES = ("24_Hour", "6_Hour_Mean", "6_Hour_SD")

BIN_MS = 6 * 3600 * 1000
DAY_MS = 4 * BIN_MS
_EPOCH = dt.date(1970, 1, 1)


class DiurnalBin(IntEnum):
    NIGHT = 0       # [00:00, 06:00)
    MORNING = 1     # [06:00, 12:00)
    AFTERNOON = 2   # [12:00, 18:00)
    EVENING = 3     # [18:00, 24:00)


def normalize_category(name: str) -> str:
    """'Photo and Video' / 'Photo & Video' / 'Photo_Video' -> 'Photo_Video'."""
    words = [w for w in re.split(r"[^0-9A-Za-z]+", name) if w and w.lower() != "and"]
    return "_".join(w[:1].upper() + w[1:] for w in words)


def feature_names(categories: Sequence[str] = CATEGORIES) -> list[str]:
    names = []
    for day in DAY_TYPES:
        for cat in categories:
            for metric in CORE_METRICS:
                names.extend(f"{day}_{cat}_{metric}_{scope}" for scope in SCOPES)
        for metric in SESSION_METRICS:
            names.extend(f"{day}_{SMARTPHONE}_{metric}_{scope}" for scope in SCOPES)
    return names


def parse_feature_name(name: str) -> tuple[str, str, str, str]:
    """Split a column name into (day type, category, metric, scope)."""
    day, rest = name.split("_", 1)
    for scope in SCOPES:
        if rest.endswith("_" + scope):
            rest = rest[: -len(scope) - 1]
            break
    else:
        raise ValueError(f"not a feature name: {name!r}")
    for metric in sorted(SESSION_METRICS + CORE_METRICS, key=len, reverse=True):
        if rest.endswith("_" + metric):
            return day, rest[: -len(metric) - 1], metric, scope
    raise ValueError(f"not a feature name: {name!r}")


# ---------------------------------------------------------------- diurnal split

def _split_arrays(start: np.ndarray, end: np.ndarray, offset_ms: np.ndarray):
    """Cut spans at local 6-hour boundaries.

    Returns (row, local_day, bin, duration_ms) per piece, where local_day counts
    days since 1970-01-01 in local time.
    """
    ls = start + offset_ms
    le = end + offset_ms
    b0 = ls // BIN_MS
    b1 = (le - 1) // BIN_MS
    count = (b1 - b0 + 1).astype(np.int64)
    row = np.repeat(np.arange(len(start)), count)
    step = np.arange(len(row)) - np.repeat(np.cumsum(count) - count, count)
    gb = b0[row] + step
    piece_start = np.maximum(ls[row], gb * BIN_MS)
    piece_end = np.minimum(le[row], (gb + 1) * BIN_MS)
    return row, gb // 4, gb % 4, piece_end - piece_start


@dataclass(frozen=True)
class DiurnalSplit:
    pieces: list[tuple[dt.date, DiurnalBin, int]]
    launch: tuple[dt.date, DiurnalBin]


def split_diurnal(interval: UsageInterval, manifest: CohortManifest | None = None) -> DiurnalSplit:
    """Split one interval over local days and diurnal bins.

    The offset comes from the interval itself (or the manifest when the
    interval carries none); the launch is attributed to the bin of the start.
    """
    offset = interval.local_offset_min
    if manifest is not None and not offset:
        offset = manifest.offset(interval.participant_id)
    off = np.array([offset * 60_000], np.int64)
    _, day, b, dur = _split_arrays(np.array([interval.start_ms], np.int64),
                                   np.array([interval.end_ms], np.int64), off)
    pieces = [(_EPOCH + dt.timedelta(days=int(d)), DiurnalBin(int(k)), int(ms))
              for d, k, ms in zip(day, b, dur)]
    return DiurnalSplit(pieces, pieces[0][:2])


def local_weekday(local_day: np.ndarray) -> np.ndarray:
    return (local_day + 3) % 7  # 1970-01-01 was a Thursday


# ---------------------------------------------------------------- scalar metrics

def entropy(durations: Iterable[float], log_base: float = math.e) -> float:
    d = np.asarray(list(durations), dtype=float)
    if np.any(d < 0):
        raise NegativeDuration("durations must be >= 0")
    d = d[d > 0]
    if d.size == 0:
        return 0.0
    p = d / d.sum()
    p = p[p > 0]   # subnormal shares can underflow to 0
    e = float(-(p * np.log(p)).sum())
    if log_base != math.e:
        e /= math.log(log_base)
    return max(e, 0.0)


def hamming_ratio(target_apps: set, depressed_refs: Sequence[set], nondepressed_refs: Sequence[set],
                  smoothed: bool = True) -> float:
    """Minimum symmetric-difference distance to the depressed references over
    the one to the nondepressed references, as (D+1)/(ND+1) by default."""
    if not depressed_refs or not nondepressed_refs:
        raise EmptyReferenceGroup("both reference groups must be non-empty")
    target = set(target_apps)
    d = min(len(target ^ set(r)) for r in depressed_refs)
    nd = min(len(target ^ set(r)) for r in nondepressed_refs)
    if smoothed:
        return (d + 1) / (nd + 1)
    if nd == 0:
        raise ZeroDivisionError("raw hamming ratio undefined when the nondepressed distance is 0")
    return d / nd


# ---------------------------------------------------------------- matrix

@dataclass(frozen=True)
class ScalingParams:
    feature_names: tuple[str, ...]
    train_ids: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray

    def to_json(self) -> dict:
        return {"feature_names": list(self.feature_names), "train_ids": list(self.train_ids),
                "mean": [float(v) for v in self.mean], "sd": [float(v) for v in self.sd]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ScalingParams":
        return cls(tuple(obj["feature_names"]), tuple(obj["train_ids"]),
                   np.asarray(obj["mean"], float), np.asarray(obj["sd"], float))


@dataclass
class FeatureMatrix:
    participant_ids: list[str]
    feature_names: list[str]
    values: np.ndarray
    dropped: dict[str, str] = field(default_factory=dict)
    scaling: ScalingParams | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.participant_ids), len(self.feature_names)):
            raise ValueError(f"value grid {self.values.shape} does not match ids/names")

    @property
    def shape(self):
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def rows(self, ids: Sequence[str]) -> "FeatureMatrix":
        index = {p: i for i, p in enumerate(self.participant_ids)}
        try:
            sel = [index[p] for p in ids]
        except KeyError as exc:
            raise UnknownParticipant(str(exc)) from None
        return FeatureMatrix(list(ids), list(self.feature_names), self.values[sel], dict(self.dropped), self.scaling)

    def columns(self, names: Sequence[str]) -> "FeatureMatrix":
        index = {n: i for i, n in enumerate(self.feature_names)}
        sel = [index[n] for n in names]
        scaling = None
        if self.scaling is not None:
            scaling = ScalingParams(tuple(names), self.scaling.train_ids, self.scaling.mean[sel], self.scaling.sd[sel])
        return FeatureMatrix(list(self.participant_ids), list(names), self.values[:, sel], dict(self.dropped), scaling)

    def drop(self, names: Mapping[str, str]) -> "FeatureMatrix":
        keep = [n for n in self.feature_names if n not in names]
        out = self.columns(keep)
        out.dropped.update({n: r for n, r in names.items() if n in self.feature_names})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["participant_id", *self.feature_names]) + "\n")
        for pid, row in zip(self.participant_ids, self.values):
            buf.write(pid + "," + ",".join("%.9g" % v for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureMatrix":
        lines = text.splitlines()
        header = lines[0].split(",")
        if header[0] != "participant_id":
            raise DataError("first column must be participant_id")
        ids, rows = [], []
        for line in lines[1:]:
            if not line:
                continue
            parts = line.split(",")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
        values = np.array(rows, float).reshape(len(ids), len(header) - 1)
        return cls(ids, header[1:], values)

    def sidecar(self) -> dict:
        return {
            "n_participants": len(self.participant_ids),
            "n_features": len(self.feature_names),
            "dropped": dict(sorted(self.dropped.items())),
            "scaling": self.scaling.to_json() if self.scaling is not None else None,
        }


@dataclass
class CohortFeatures:
    """Label-independent behavioral tables for a cohort.

    Everything except the hamming-ratio columns is fixed per cohort; the
    ratio columns depend on which participants serve as depressed and
    nondepressed references, so ``matrix`` takes those labels.
    """

    participant_ids: list[str]
    feature_names: list[str]
    base: np.ndarray                 # (P, F) with hamming columns left at 0
    distances: np.ndarray            # (T, 5 scopes, C, P, P) symmetric-difference sizes
    hamming_cols: np.ndarray         # (T, C, 3) column index for 24h / mean / SD
    categories: tuple[str, ...] = CATEGORIES
    dropped: dict[str, str] = field(default_factory=dict)

    def hamming_block(self, reference_labels: Mapping[str, int], smoothed: bool = True) -> np.ndarray:
        """Ratio values of shape (T, C, P, 5 scopes)."""
        index = {p: i for i, p in enumerate(self.participant_ids)}
        P = len(self.participant_ids)
        dep = np.zeros(P, bool)
        non = np.zeros(P, bool)
        for pid, lab in reference_labels.items():
            if pid not in index:
                raise UnknownParticipant(pid)
            (dep if int(lab) == 1 else non)[index[pid]] = True
        not_self = ~np.eye(P, dtype=bool)
        dep_ok = dep[None, :] & not_self
        non_ok = non[None, :] & not_self
        if not dep_ok.any(axis=1).all() or not non_ok.any(axis=1).all():
            raise EmptyReferenceGroup("a target has no depressed or no nondepressed reference")
        big = np.iinfo(np.int32).max
        dist = self.distances
        d_min = np.where(dep_ok, dist, big).min(axis=-1)     # (T, S, C, P)
        nd_min = np.where(non_ok, dist, big).min(axis=-1)
        if smoothed:
            ratio = (d_min + 1.0) / (nd_min + 1.0)
        else:
            if np.any(nd_min == 0):
                raise ZeroDivisionError("raw hamming ratio undefined when the nondepressed distance is 0")
            ratio = d_min / nd_min
        return np.moveaxis(ratio, (0, 1, 2, 3), (0, 3, 1, 2))

    def matrix(self, reference_labels: Mapping[str, int], smoothed: bool = True) -> FeatureMatrix:
        values = self.base.copy()
        ratio = self.hamming_block(reference_labels, smoothed)          # (T, C, P, 5)
        bins = ratio[..., :4]
        stats = np.stack([ratio[..., 4], bins.mean(axis=-1), bins.std(axis=-1)], axis=-1)  # (T, C, P, 3)
        cols = self.hamming_cols
        valid = cols >= 0
        values[:, cols[valid]] = np.moveaxis(stats, 2, 0)[:, valid]
        keep = [i for i, n in enumerate(self.feature_names) if n not in self.dropped]
        return FeatureMatrix(list(self.participant_ids), [self.feature_names[i] for i in keep],
                             values[:, keep], dict(self.dropped))

    def unlabeled_matrix(self) -> FeatureMatrix:
        """Matrix with ratio columns left at zero; for label-free statistics."""
        keep = [i for i, n in enumerate(self.feature_names) if n not in self.dropped]
        return FeatureMatrix(list(self.participant_ids), [self.feature_names[i] for i in keep],
                             self.base[:, keep], dict(self.dropped))

    def filtered(self, min_user_fraction: float = 0.5) -> "CohortFeatures":
        drops = _prevalence_drops(self.participant_ids, self.feature_names, self.base, min_user_fraction)
        out = CohortFeatures(self.participant_ids, self.feature_names, self.base, self.distances,
                             self.hamming_cols, self.categories, {**self.dropped, **drops})
        return out

    def save(self, path) -> None:
        np.savez_compressed(
            path, base=self.base, distances=self.distances, hamming_cols=self.hamming_cols,
            meta=np.frombuffer(json.dumps({
                "participant_ids": self.participant_ids, "feature_names": self.feature_names,
                "categories": list(self.categories), "dropped": self.dropped,
            }).encode(), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path) -> "CohortFeatures":
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            return cls(meta["participant_ids"], meta["feature_names"], z["base"], z["distances"],
                       z["hamming_cols"], tuple(meta["categories"]), meta["dropped"])


def _category_codes(packages: Sequence[str], catalog: AppCatalog, categories: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(categories) if c != SMARTPHONE}
    return np.array([index.get(normalize_category(catalog.lookup(p)), -1) for p in packages], dtype=np.int64)


def _day_type(local_day: np.ndarray, weekend_days: frozenset[int]) -> np.ndarray:
    return np.isin(local_weekday(local_day), sorted(weekend_days)).astype(np.int64)


def cohort_features(intervals: IntervalTable, catalog: AppCatalog, manifest: CohortManifest,
                    sessions: SessionTable | None = None, gap_ms: int = SESSION_GAP_MS,
                    categories: Sequence[str] = CATEGORIES) -> CohortFeatures:
    categories = tuple(categories)
    if categories[-1] != SMARTPHONE or SMARTPHONE in categories[:-1]:
        raise ValueError("categories must end with the Smartphone aggregate")
    if sessions is None:
        sessions = session_table(intervals, gap_ms)
    P, T, C, S = len(intervals.participants), 2, len(categories), 5
    SP = C - 1
    cat_of_pkg = _category_codes(intervals.packages, catalog, categories)
    off_ms = intervals.offsets_min[intervals.pid] * 60_000 if len(intervals) else np.zeros(0, np.int64)

    row, day, b, dur = _split_arrays(intervals.start, intervals.end, off_ms)
    p_piece = intervals.pid[row]
    t_piece = _day_type(day, manifest.weekend_days)
    c_piece = cat_of_pkg[intervals.pkg[row]]

    def accumulate(shape_last, p, t, s, c, w):
        out = np.zeros((P, T, S, shape_last))
        for ss in (s, np.full_like(s, 4)):
            np.add.at(out, (p, t, ss, np.full_like(p, SP)), w)
            known = c >= 0
            np.add.at(out, (p[known], t[known], ss[known], c[known]), w[known])
        return out

    duration = accumulate(C, p_piece, t_piece, b, c_piece, dur.astype(float)) / 1000.0

    l_day = (intervals.start + off_ms) // DAY_MS
    l_bin = ((intervals.start + off_ms) % DAY_MS) // BIN_MS
    launch = accumulate(C, intervals.pid, _day_type(l_day, manifest.weekend_days), l_bin,
                        cat_of_pkg[intervals.pkg], np.ones(len(intervals)))

    # Per-app durations per (participant, day type, scope).
    A = len(intervals.packages)
    app_ms = np.zeros((P, T, S, A))
    app_piece = intervals.pkg[row]
    np.add.at(app_ms, (p_piece, t_piece, b, app_piece), dur.astype(float))
    app_ms[:, :, 4, :] = app_ms[:, :, :4, :].sum(axis=2)
    used = app_ms > 0

    n_apps = np.zeros((P, T, S, C))
    ent = np.zeros((P, T, S, C))
    distances = np.zeros((T, S, C, P, P), dtype=np.int32)
    for c in range(C):
        cols = np.arange(A) if c == SP else np.flatnonzero(cat_of_pkg == c)
        sub = app_ms[..., cols]
        n_apps[..., c] = used[..., cols].sum(axis=-1)
        tot = sub.sum(axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(sub > 0, sub / np.where(tot > 0, tot, 1.0), 0.0)
            ent[..., c] = np.maximum(-(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)).sum(axis=-1), 0.0)
        m = used[..., cols].astype(np.int32)   # (P, T, S, a)
        for t in range(T):
            for s in range(S):
                mm = m[:, t, s, :]
                size = mm.sum(axis=1)
                inter = mm @ mm.T
                distances[t, s, c] = size[:, None] + size[None, :] - 2 * inter

    sess = np.zeros((P, T, S, 4))
    if len(sessions):
        s_local = sessions.start + intervals.offsets_min[sessions.pid] * 60_000
        s_t = _day_type(s_local // DAY_MS, manifest.weekend_days)
        s_b = (s_local % DAY_MS) // BIN_MS
        for ss in (s_b, np.full_like(s_b, 4)):
            np.add.at(sess, (sessions.pid, s_t, ss, np.zeros_like(ss)), 1.0)
            np.add.at(sess, (sessions.pid, s_t, ss, 1 + sessions.kind.astype(np.int64)), 1.0)

    names = feature_names(categories)
    base = np.zeros((P, len(names)))
    hamming_cols = np.full((T, C, 3), -1, dtype=np.int64)
    col = 0

    def put(block):  # block: (P, 5) -> writes total / mean / SD
        nonlocal col
        base[:, col] = block[:, 4]
        base[:, col + 1] = block[:, :4].mean(axis=1)
        base[:, col + 2] = block[:, :4].std(axis=1)
        col += 3

    for t in range(T):
        for c in range(C):
            for metric, table in zip(CORE_METRICS, (duration, launch, n_apps, ent, None)):
                if table is None:
                    hamming_cols[t, c] = (col, col + 1, col + 2)
                    col += 3
                else:
                    put(table[:, t, :, c])
        for k in range(4):
            put(sess[:, t, :, k])
    assert col == len(names)
    return CohortFeatures(list(intervals.participants), names, base, distances, hamming_cols, categories)


def assemble_matrix(intervals: IntervalTable, catalog: AppCatalog, manifest: CohortManifest,
                    hamming_labels: Mapping[str, int], sessions: SessionTable | None = None,
                    smoothed: bool = True) -> FeatureMatrix:
    """Raw (unfiltered, unscaled) matrix with the full column set."""
    return cohort_features(intervals, catalog, manifest, sessions).matrix(hamming_labels, smoothed)


# ---------------------------------------------------------------- prevalence filter

def category_users(participant_ids: Sequence[str], names: Sequence[str], values: np.ndarray) -> dict[str, set[str]]:
    """Participants with any app of a category in their window (from the raw app counts)."""
    index = {n: i for i, n in enumerate(names)}
    users: dict[str, set[str]] = {}
    for cat in {parse_feature_name(n)[1] for n in names if parse_feature_name(n)[2] == "Num_of_Apps"}:
        total = np.zeros(len(participant_ids))
        for day in DAY_TYPES:
            name = f"{day}_{cat}_Num_of_Apps_24_Hour"
            if name in index:
                total += values[:, index[name]]
        users[cat] = {p for p, v in zip(participant_ids, total) if v > 0}
    return users


def _prevalence_drops(participant_ids, names, values, min_user_fraction) -> dict[str, str]:
    if min_user_fraction <= 0:
        return {}
    n = len(participant_ids)
    users = category_users(participant_ids, names, values)
    low = {c for c, u in users.items() if len(u) < min_user_fraction * n}
    reason = f"category used by fewer than {min_user_fraction:.0%} of participants"
    return {name: reason for name in names if parse_feature_name(name)[1] in low}


def prevalence_filter(matrix: FeatureMatrix, min_user_fraction: float = 0.5) -> FeatureMatrix:
    """Move every column of a category used by fewer than the given share of
    participants into the dropped registry. Expects an unscaled matrix."""
    drops = _prevalence_drops(matrix.participant_ids, matrix.feature_names, matrix.values, min_user_fraction)
    return matrix.drop(drops)


# ---------------------------------------------------------------- scaling

def fit_scaler(matrix: FeatureMatrix, train_ids: Sequence[str]) -> ScalingParams:
    train = matrix.rows(train_ids).values
    mean = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 0.0
    return ScalingParams(tuple(matrix.feature_names), tuple(train_ids), mean, sd)


def apply_scaler(matrix: FeatureMatrix, params: ScalingParams) -> FeatureMatrix:
    if tuple(matrix.feature_names) != params.feature_names:
        raise ValueError("scaling parameters were fitted on a different column set")
    safe = np.where(params.sd > 0, params.sd, 1.0)
    z = np.where(params.sd > 0, (matrix.values - params.mean) / safe, 0.0)
    return FeatureMatrix(list(matrix.participant_ids), list(matrix.feature_names), z, dict(matrix.dropped), params)
