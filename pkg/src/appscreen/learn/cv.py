"""Nested leave-one-participant-out evaluation, stacking and leakage audit.

Every outer fold rebuilds the hamming-ratio columns from the training
participants' labels, fits the scaler on training rows, selects features,
tunes and fits on training rows, then predicts the held-out participant.
Each stage reports the participant ids it was handed to a ``LeakageAudit``;
seeing the held-out id there raises ``LeakageDetected``.
"""
from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DegenerateLabels, LeakageDetected, UnknownParticipant
from ..features import CohortFeatures, apply_scaler, fit_scaler
from ..select import SelectionResult, run_selection
from .linear import Logit
from .metrics import Metrics, metrics
from .models import ModelSpec, TrainedModel, fit
from .tuning import stratified_folds, tune

MIN_PARTICIPANTS = 25


@dataclass(frozen=True)
class FSConfig:
    method: str = "stable"
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"method": self.method, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "FSConfig":
        return cls(obj.get("method", "stable"), dict(obj.get("params", {})))


@dataclass
class StackSpec:
    """Stacking of already-ranked base specs with a logistic meta learner."""

    bases: list[ModelSpec]
    meta_folds: int = 10
    parity: bool = True
    meta_C: float = 1.0
    name: str = "stack"

    def __post_init__(self):
        if self.parity and self.meta_folds != 10:
            raise ConfigError("parity stacking uses exactly 10 meta folds; disable parity to change it")
        if not self.bases:
            raise ConfigError("stacking needs at least one base spec")


class LeakageAudit:
    """Counts the rows each stage touched and rejects any held-out touch."""

    def __init__(self):
        self.rows = Counter()
        self.held_out_touches = 0

    def touch(self, stage: str, ids: Sequence[str], held_out: str) -> None:
        ids = list(ids)
        self.rows[stage] += len(ids)
        if held_out in ids:
            self.held_out_touches += 1
            raise LeakageDetected(f"held-out participant {held_out!r} reached stage {stage!r}")

    def merge(self, other: "LeakageAudit") -> None:
        self.rows.update(other.rows)
        self.held_out_touches += other.held_out_touches

    def to_json(self) -> dict:
        return {"rows_touched": dict(sorted(self.rows.items())), "held_out_touches": self.held_out_touches}


@dataclass
class FoldRow:
    participant_id: str
    y_true: int
    y_pred: int
    prob: float
    selected: list[str]
    hyperparams: dict
    fallback: bool = False
    explanation: dict | None = None


@dataclass
class EvalReport:
    spec: str
    fs: dict
    hamming: str
    seed: int
    rows: list[FoldRow]
    audit: dict = field(default_factory=dict)

    @property
    def metrics(self) -> Metrics:
        return metrics([r.y_true for r in self.rows], [r.y_pred for r in self.rows], [r.prob for r in self.rows])

    def to_json(self) -> str:
        return json.dumps({"spec": self.spec, "fs": self.fs, "hamming": self.hamming, "seed": self.seed,
                           "rows": [asdict(r) for r in self.rows], "metrics": self.metrics.to_json(),
                           "audit": self.audit}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        obj = json.loads(text)
        return cls(obj["spec"], obj["fs"], obj["hamming"], obj["seed"], [FoldRow(**r) for r in obj["rows"]],
                   obj.get("audit", {}))


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


# ---------------------------------------------------------------- stacking

class StackedModel:
    """Meta logistic model over the base models' probabilities."""

    algorithm = "stack"

    def __init__(self, bases: list[TrainedModel], meta: Logit, feature_names: tuple[str, ...]):
        self.bases = bases
        self.meta = meta
        self.feature_names = tuple(feature_names)

    def base_design(self, X) -> np.ndarray:
        return np.column_stack([b.predict_array(X) for b in self.bases])

    def predict_array(self, X) -> np.ndarray:
        return np.clip(self.meta.predict_proba(self.base_design(np.asarray(X, float))), 0.0, 1.0)

    def predict_proba(self, X, feature_names=None) -> np.ndarray:
        names = getattr(X, "feature_names", feature_names)
        if names is None or tuple(names) != self.feature_names:
            from ..errors import FeatureContractError
            raise FeatureContractError("feature names differ from the stacked model's contract")
        return self.predict_array(getattr(X, "values", X))

    def used_features(self) -> set[str]:
        return set().union(*(b.used_features() for b in self.bases))

    def to_json(self) -> str:
        return json.dumps({"algorithm": "stack", "feature_names": list(self.feature_names),
                           "bases": [json.loads(b.to_json()) for b in self.bases],
                           "meta": self.meta.state(), "meta_C": self.meta.C})

    @classmethod
    def from_json(cls, text: str) -> "StackedModel":
        obj = json.loads(text)
        bases = [TrainedModel.from_json(json.dumps(b)) for b in obj["bases"]]
        meta = Logit(obj["meta_C"]).load_state(obj["meta"])
        return cls(bases, meta, tuple(obj["feature_names"]))


def stack(bases: Sequence[ModelSpec], X, y, hyperparams: Sequence[Mapping] | None = None,
          feature_names: Sequence[str] | None = None, meta_folds: int = 10, parity: bool = True,
          seed: int = 0, meta_C: float = 1.0) -> StackedModel:
    """Out-of-fold base probabilities train the meta learner; bases are then
    refit on all rows for prediction."""
    if parity and meta_folds != 10:
        raise ConfigError("parity stacking uses exactly 10 meta folds; disable parity to change it")
    X = np.asarray(X, float)
    y = np.asarray(y).astype(int)
    if len(y) < meta_folds:
        raise ConfigError(f"{len(y)} rows cannot form {meta_folds} meta folds")
    hyperparams = list(hyperparams) if hyperparams is not None else [{} for _ in bases]
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    fold = stratified_folds(y, meta_folds, seed)
    oof = np.zeros((len(y), len(bases)))
    for f in range(meta_folds):
        test = fold == f
        if not test.any():
            continue
        for j, (spec, params) in enumerate(zip(bases, hyperparams)):
            model = fit(spec, X[~test], y[~test], params, names, seed=seed)
            oof[test, j] = model.predict_array(X[test])
    meta = Logit(meta_C).fit(oof, y)
    full = [fit(spec, X, y, params, names, seed=seed) for spec, params in zip(bases, hyperparams)]
    return StackedModel(full, meta, names)


# ---------------------------------------------------------------- nested LOPOCV

def _check_cohort(features: CohortFeatures, labels: Mapping[str, int]) -> np.ndarray:
    missing = [p for p in features.participant_ids if p not in labels]
    if missing:
        raise UnknownParticipant(f"no label for {missing[:3]}")
    if len(features.participant_ids) < MIN_PARTICIPANTS:
        raise ConfigError(f"nested LOPOCV needs at least {MIN_PARTICIPANTS} participants")
    y = np.array([int(labels[p]) for p in features.participant_ids])
    if y.min() == y.max():
        raise DegenerateLabels("cohort labels contain a single class")
    return y


def _selection(fs: FSConfig, X, y, names, seed) -> tuple[list[str], bool, SelectionResult]:
    result = run_selection(fs.method, X, y, names, seed=seed, **fs.params)
    if result.selected:
        return list(result.selected), False, result
    # nothing passed the criterion: keep the single best-scoring column
    best = sorted(result.scores, key=lambda n: (-result.scores[n], n))[0]
    return [best], True, result


def run_fold(features: CohortFeatures, labels: Mapping[str, int], held_out: str, specs, fs: FSConfig,
             seed: int, inner_folds: int = 20, hamming: str = "per_fold", smoothed: bool = True,
             explain: bool = False, background_max: int | None = None, d_max: int = 20):
    """One outer fold; returns ({spec name: FoldRow}, audit)."""
    audit = LeakageAudit()
    ids = features.participant_ids
    train_ids = [p for p in ids if p != held_out]
    if hamming == "per_fold":
        reference = {p: int(labels[p]) for p in train_ids}
        audit.touch("hamming_reference", list(reference), held_out)
    elif hamming == "global":
        reference = {p: int(labels[p]) for p in ids}
    else:
        raise ConfigError(f"unknown hamming mode {hamming!r}")
    full = features.matrix(reference, smoothed)
    scaler = fit_scaler(full, train_ids)
    audit.touch("scaler", scaler.train_ids, held_out)
    z = apply_scaler(full, scaler)
    train = z.rows(train_ids)
    test = z.rows([held_out])
    y_train = np.array([int(labels[p]) for p in train.participant_ids])

    audit.touch("feature_selection", train.participant_ids, held_out)
    selected, fallback, _ = _selection(fs, train.values, y_train, train.feature_names, seed)
    X_train = train.columns(selected).values
    x_test = test.columns(selected).values

    rows = {}
    for spec in specs:
        audit.touch(f"tune:{spec.name}", train.participant_ids, held_out)
        if isinstance(spec, StackSpec):
            tuned = [tune(b, X_train, y_train, inner_folds, seed)[0] for b in spec.bases]
            audit.touch(f"fit:{spec.name}", train.participant_ids, held_out)
            model = stack(spec.bases, X_train, y_train, tuned, selected, spec.meta_folds, spec.parity, seed,
                          spec.meta_C)
            params = {"bases": [b.name for b in spec.bases], "hyperparams": tuned}
        else:
            params, _ = tune(spec, X_train, y_train, inner_folds, seed)
            audit.touch(f"fit:{spec.name}", train.participant_ids, held_out)
            model = fit(spec, X_train, y_train, params, selected, seed=seed)
            params = model.params
        prob = float(model.predict_array(x_test)[0])
        explanation = None
        if explain and len(selected) <= d_max:
            from ..explain import exact_shapley
            background = X_train if background_max is None else X_train[:background_max]
            audit.touch(f"explain_background:{spec.name}", train.participant_ids[: len(background)], held_out)
            explanation = exact_shapley(model, x_test[0], background, d_max, held_out, selected).to_json()
        rows[spec.name] = FoldRow(held_out, int(labels[held_out]), int(prob >= 0.5), prob, selected,
                                  params, fallback, explanation)
    return rows, audit


def _run_fold_job(args):
    return run_fold(*args[:-1], **args[-1])


def nested_lopocv(features: CohortFeatures, labels: Mapping[str, int], specs: Sequence[ModelSpec | StackSpec],
                  fs: FSConfig = FSConfig(), seed: int = 0, inner_folds: int = 20, hamming: str = "per_fold",
                  smoothed: bool = True, explain: bool = False, background_max: int | None = None,
                  d_max: int = 20, n_jobs: int = 1) -> dict[str, EvalReport]:
    """One EvalReport per spec, rows ordered by participant id."""
    _check_cohort(features, labels)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("spec names must be unique")
    options = {"inner_folds": inner_folds, "hamming": hamming, "smoothed": smoothed, "explain": explain,
               "background_max": background_max, "d_max": d_max}
    jobs = [(features, labels, pid, specs, fs, fold_seed(seed, k), options)
            for k, pid in enumerate(features.participant_ids)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_run_fold_job, jobs))
    else:
        results = [_run_fold_job(job) for job in jobs]
    audit = LeakageAudit()
    per_spec: dict[str, list[FoldRow]] = {n: [] for n in names}
    for rows, fold_audit in results:
        audit.merge(fold_audit)
        for name, row in rows.items():
            per_spec[name].append(row)
    return {
        name: EvalReport(name, fs.to_json(), hamming, seed,
                         sorted(rows, key=lambda r: r.participant_id), audit.to_json())
        for name, rows in per_spec.items()
    }
