"""PHQ-9 labelling and seeded synthetic cohorts.

The generator realizes per-participant day templates as alternating
foreground/background pairs. All event arithmetic is integer-only (table
lookups and integer draws), so a seed reproduces the same bytes everywhere.
Planted effects are stored as per-mille adjustments applied to the depressed
archetype; null mode draws labels independently of behavior.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, ItemOutOfRange
from .features import STANDARD_CATEGORIES
from .ingest import WEEK_MS, AppCatalog, CohortManifest

PHQ9_CUTOFF = 10
BIN_MS = 6 * 3600 * 1000
MIN_SESSION_GAP_MS = 46_000

# Share of synthetic participants using each category at all.
PREVALENCE_PERMILLE = {
    "Communication": 1000, "Social": 980, "Tools": 1000, "Browser": 950, "Education": 960,
    "Photo_Video": 960, "Productivity": 900, "Entertainment": 850, "Music_Audio": 800,
    "Games": 750, "Books_Reference": 700, "Finance": 600, "Maps_Navigation": 600,
    "Personalization": 550, "Shopping": 550, "News_Magazines": 500, "Lifestyle": 450,
    "Health_Fitness": 400, "Business": 350, "Weather": 300, "Travel_Local": 300,
    "Food_Drink": 250, "Medical": 150, "Dating": 100, "Beauty": 100, "Auto_Vehicles": 80,
    "Art_Design": 50,
}
# Relative time share among the categories a participant uses.
USAGE_WEIGHT = {
    "Communication": 30, "Social": 30, "Tools": 8, "Browser": 12, "Education": 16,
    "Photo_Video": 10, "Productivity": 8, "Entertainment": 10, "Music_Audio": 6, "Games": 10,
    "Books_Reference": 5,
}
APP_POOL = {"Photo_Video": 12, "Tools": 20, "Communication": 10, "Social": 8, "Games": 15,
            "Education": 8, "Productivity": 10, "Books_Reference": 10}
# Interval lengths (ms) and integer weights; roughly log-normal with a 20 s median.
LENGTH_MS = (1000, 2000, 3000, 5000, 8000, 12000, 16000, 20000, 25000, 32000, 45000,
             60000, 90000, 150000, 300000, 600000)
LENGTH_WEIGHT = (4, 6, 7, 9, 10, 10, 9, 9, 8, 7, 6, 5, 4, 3, 2, 1)
# Relative session intensity for night / morning / afternoon / evening.
BIN_INTENSITY = (3, 20, 24, 30)


@dataclass(frozen=True)
class Effect:
    """Per-mille change for the depressed archetype.

    metric ``Duration`` scales interval lengths of the category on days of the
    given type; ``Num_of_Apps`` scales how many distinct apps of the category
    the participant uses on those days.
    """

    day_type: str
    category: str
    metric: str
    permille: int

    def __post_init__(self):
        if self.day_type not in ("Weekday", "Weekend"):
            raise ConfigError(f"bad day type {self.day_type!r}")
        if self.category not in STANDARD_CATEGORIES:
            raise ConfigError(f"bad category {self.category!r}")
        if self.metric not in ("Duration", "Num_of_Apps"):
            raise ConfigError(f"unsupported effect metric {self.metric!r}")
        if not isinstance(self.permille, int) or self.permille <= -1000:
            raise ConfigError("permille must be an integer > -1000")

    @property
    def family(self) -> str:
        """Column-name prefix of the features this effect manipulates."""
        return f"{self.day_type}_{self.category}_"


STRONG_EFFECTS = (
    Effect("Weekday", "Education", "Duration", -500),
    Effect("Weekend", "Photo_Video", "Num_of_Apps", 1000),
)


@dataclass(frozen=True)
class SynthConfig:
    n: int = 100
    depressed_fraction: float = 0.51
    seed: int = 0
    effects: tuple[Effect, ...] = STRONG_EFFECTS
    events_per_participant: int = 8000
    window_end_ms: int = 1_623_002_400_000   # 2021-06-07 00:00 at UTC+06:00 (a Monday)
    offset_min: int = 360
    weekend_days: tuple[int, ...] = (5, 6)
    full_coverage: bool = False
    labels_independent: bool = False

    def __post_init__(self):
        if self.n < 25:
            raise ConfigError("synthetic cohorts need n >= 25")
        if not 0 < self.depressed_fraction < 1:
            raise ConfigError("depressed_fraction must be in (0, 1)")
        if self.events_per_participant < 20:
            raise ConfigError("events_per_participant must be >= 20")

    @property
    def n_depressed(self) -> int:
        return int(round(self.n * self.depressed_fraction))


# ---------------------------------------------------------------- PHQ-9

@dataclass(frozen=True)
class Phq9Record:
    participant_id: str
    items: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.items)

    @property
    def depressed(self) -> bool:
        return self.total >= PHQ9_CUTOFF


def score_phq9(items: Sequence[int]) -> tuple[int, bool]:
    """Return (total, depressed) for nine item scores in 0..3."""
    items = list(items)
    if len(items) != 9:
        raise ItemOutOfRange(f"expected 9 items, got {len(items)}")
    for v in items:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= v <= 3:
            raise ItemOutOfRange(f"item score {v!r} not in 0..3")
    total = int(sum(items))
    return total, total >= PHQ9_CUTOFF


def load_labels(stream) -> dict[str, Phq9Record]:
    text = stream if isinstance(stream, (str, bytes)) else stream.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != ["participant_id"] + [f"i{k}" for k in range(1, 10)]:
        raise DataError("labels header must be participant_id,i1,...,i9")
    out = {}
    for row in reader:
        if not row:
            continue
        try:
            items = tuple(int(v) for v in row[1:])
        except ValueError:
            raise ItemOutOfRange(f"non-integer item in row {row!r}") from None
        score_phq9(items)
        out[row[0]] = Phq9Record(row[0], items)
    return out


def classes(records: Mapping[str, Phq9Record]) -> dict[str, int]:
    return {pid: int(r.depressed) for pid, r in records.items()}


def labels_csv(records: Sequence[Phq9Record]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["participant_id"] + [f"i{k}" for k in range(1, 10)])
    for r in records:
        w.writerow([r.participant_id, *r.items])
    return buf.getvalue()


# ---------------------------------------------------------------- generator

@dataclass
class SynthCohort:
    events: bytes
    manifest: CohortManifest
    catalog: AppCatalog
    labels: list[Phq9Record]
    config: SynthConfig
    unknown_packages: list[str] = field(default_factory=list)

    FILES = ("events.jsonl", "manifest.json", "catalog.csv", "labels.csv")

    def files(self) -> dict[str, bytes]:
        return {
            "events.jsonl": self.events,
            "manifest.json": (json.dumps(self.manifest.to_json(), indent=2, sort_keys=True) + "\n").encode(),
            "catalog.csv": self.catalog.to_csv().encode(),
            "labels.csv": labels_csv(self.labels).encode(),
        }

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, data in self.files().items():
            (out / name).write_bytes(data)
            paths.append(out / name)
        return paths

    @property
    def classes(self) -> dict[str, int]:
        return {r.participant_id: int(r.depressed) for r in self.labels}


def _catalog() -> tuple[dict[str, list[str]], AppCatalog]:
    pools = {}
    mapping = {}
    for cat in STANDARD_CATEGORIES:
        size = APP_POOL.get(cat, 4)
        pools[cat] = [f"com.synth.{cat.lower()}.app{k:02d}" for k in range(size)]
        for pkg in pools[cat]:
            mapping[pkg] = cat.replace("_", " and ") if cat == "Photo_Video" else cat
    return pools, AppCatalog(mapping)


def _phq_items(rng: np.random.Generator, depressed: bool) -> tuple[int, ...]:
    total = int(rng.integers(PHQ9_CUTOFF, 28)) if depressed else int(rng.integers(0, PHQ9_CUTOFF))
    items = [0] * 9
    for _ in range(total):
        open_slots = [k for k in range(9) if items[k] < 3]
        items[open_slots[int(rng.integers(0, len(open_slots)))]] += 1
    return tuple(items)


def _weighted(rng: np.random.Generator, weights: np.ndarray, size: int) -> np.ndarray:
    cum = np.cumsum(weights)
    return np.searchsorted(cum, rng.integers(0, int(cum[-1]), size=size), side="right")


def _participant_events(rng, pid, depressed, config, pools, unknown, effects) -> list[str]:
    lo = config.window_end_ms - WEEK_MS
    off = config.offset_min * 60_000
    cats = list(STANDARD_CATEGORIES)
    if config.full_coverage:
        using = list(cats)
    else:
        draws = rng.integers(0, 1000, size=len(cats))
        using = [c for c, d in zip(cats, draws) if d < PREVALENCE_PERMILLE[c]]
        if not using:
            using = ["Communication"]

    # Personal app lists and time weights per day type.
    apps: dict[tuple[int, str], list[str]] = {}
    weight = np.zeros((2, len(using)), dtype=np.int64)
    length_permille = np.full((2, len(using)), 1000, dtype=np.int64)
    for j, cat in enumerate(using):
        pool = pools[cat]
        order = rng.permutation(len(pool))
        base_k = 1 + int(rng.integers(0, min(3, len(pool))))
        w = USAGE_WEIGHT.get(cat, 2) * int(rng.integers(60, 141))
        for t, day in enumerate(("Weekday", "Weekend")):
            k = base_k
            weight[t, j] = w
            for e in effects if depressed else ():
                if e.day_type == day and e.category == cat:
                    if e.metric == "Num_of_Apps":
                        k = base_k * (1000 + e.permille) // 1000
                        weight[t, j] = w * 2
                    else:
                        length_permille[t, j] = length_permille[t, j] * (1000 + e.permille) // 1000
            k = max(1, min(len(pool), k))
            apps[(t, cat)] = [pool[i] for i in order[:k]]

    # Session arrivals over the 28 local bins of the week.
    bin_start_local = (lo + off) // BIN_MS
    bins = np.arange(bin_start_local, bin_start_local + 28)
    intensity = np.array([BIN_INTENSITY[b % 4] for b in bins], dtype=np.int64)
    volume = config.events_per_participant * int(rng.integers(700, 1301)) // 1000
    k_per = 1 + rng.integers(0, 5, size=max(1, volume // 6))
    n_sessions = len(k_per)
    which = _weighted(rng, intensity, n_sessions)
    arrival = (bins[which] * BIN_MS - off) + rng.integers(0, BIN_MS, size=n_sessions)
    arrival.sort()

    n_iv = int(k_per.sum())
    session_of = np.repeat(np.arange(n_sessions), k_per)
    lengths = np.array(LENGTH_MS, dtype=np.int64)[_weighted(rng, np.array(LENGTH_WEIGHT), n_iv)]
    lengths = lengths + rng.integers(0, 1000, size=n_iv)
    day_local = (arrival[session_of] + off) // (4 * BIN_MS)
    weekday = (day_local + 3) % 7
    tcode = np.isin(weekday, config.weekend_days).astype(np.int64)
    cat_idx = np.empty(n_iv, dtype=np.int64)
    for t in (0, 1):
        rows = np.flatnonzero(tcode == t)
        cat_idx[rows] = _weighted(rng, weight[t], len(rows))
    lengths = np.maximum(500, lengths * length_permille[tcode, cat_idx] // 1000)
    gaps = rng.integers(1000, 30_001, size=n_iv)
    first = np.ones(n_iv, dtype=bool)
    first[1:] = session_of[1:] != session_of[:-1]
    gaps[first] = 0
    # Offsets of each interval from its session start; session spans.
    step = lengths + gaps
    cum = np.cumsum(step) - step
    sess_first = np.flatnonzero(first)
    rel_start = cum - np.repeat(cum[sess_first], k_per) + gaps
    span = np.add.reduceat(step, sess_first)
    # Push sessions so consecutive ones stay apart by more than the session gap.
    push = np.concatenate([[0], np.cumsum(span[:-1] + MIN_SESSION_GAP_MS)])
    s_start = push + np.maximum.accumulate(arrival - push)
    start = s_start[session_of] + rel_start
    end = start + lengths
    keep = end < config.window_end_ms
    app_draw = rng.integers(0, 1 << 30, size=n_iv)
    switch = rng.integers(0, 1000, size=n_iv) < 40     # FG->FG without BG
    orphan = rng.integers(0, 1000, size=n_iv) < 4       # stray BG of an unknown app
    unknown_use = rng.integers(0, 1000, size=n_iv) < 15

    lines = []
    idx = np.flatnonzero(keep)
    for pos, i in enumerate(idx):
        if unknown_use[i] and unknown:
            pkg = unknown[int(app_draw[i]) % len(unknown)]
        else:
            lst = apps[(int(tcode[i]), using[int(cat_idx[i])])]
            pkg = lst[int(app_draw[i]) % len(lst)]
        lines.append(f'{{"pid": "{pid}", "pkg": "{pkg}", "ev": "FG", "ts": {int(start[i])}}}\n')
        nxt = idx[pos + 1] if pos + 1 < len(idx) else None
        same_session = nxt is not None and session_of[nxt] == session_of[i]
        if switch[i] and same_session:
            continue
        lines.append(f'{{"pid": "{pid}", "pkg": "{pkg}", "ev": "BG", "ts": {int(end[i])}}}\n')
        if orphan[i] and unknown:
            lines.append(f'{{"pid": "{pid}", "pkg": "{unknown[0]}", "ev": "BG", "ts": {int(end[i])}}}\n')
    return lines


def synth_generate(config: SynthConfig) -> SynthCohort:
    """Generate events, manifest, catalog and PHQ-9 labels for one cohort."""
    pools, catalog = _catalog()
    unknown = [f"org.unlisted.tool{k}" for k in range(3)]
    master = np.random.default_rng([config.seed, 0])
    n_dep = config.n_depressed
    is_dep = np.zeros(config.n, dtype=bool)
    is_dep[master.permutation(config.n)[:n_dep]] = True
    pids = [f"p{k:03d}" for k in range(config.n)]
    # In null mode behavior is generated from an independent archetype draw.
    archetype = is_dep if not config.labels_independent else np.zeros(config.n, dtype=bool)
    effects = config.effects
    chunks = []
    labels = []
    for k, pid in enumerate(pids):
        rng = np.random.default_rng([config.seed, 1, k])
        chunks.extend(_participant_events(rng, pid, bool(archetype[k]), config, pools, unknown, effects))
        labels.append(Phq9Record(pid, _phq_items(np.random.default_rng([config.seed, 2, k]), bool(is_dep[k]))))
    manifest = CohortManifest(config.window_end_ms, {p: config.offset_min for p in pids},
                              frozenset(config.weekend_days))
    return SynthCohort("".join(chunks).encode(), manifest, catalog, labels, config, unknown)


def null_generate(config: SynthConfig) -> SynthCohort:
    """Same artifacts with labels carrying no behavioral signal."""
    return synth_generate(replace(config, effects=(), labels_independent=True))
