"""Stratified fold assignment and seeded random-search tuning."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import FoldsExceedSamples
from .metrics import f1_score
from .models import ModelSpec, fit


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold id per row: each class is shuffled, then dealt round-robin.

    Dealing continues across classes from where the previous class stopped,
    so fold sizes differ by at most one.
    """
    y = np.asarray(y).astype(int)
    rng = np.random.default_rng([seed, 202])
    fold = np.empty(len(y), np.int64)
    pos = 0
    for c in (1, 0):
        idx = rng.permutation(np.flatnonzero(y == c))
        fold[idx] = (pos + np.arange(len(idx))) % k
        pos += len(idx)
    return fold


def inner_fold_count(y, folds: int) -> int:
    y = np.asarray(y).astype(int)
    if len(y) < folds:
        raise FoldsExceedSamples(f"{len(y)} training rows cannot form {folds} folds")
    minority = int(min(y.sum(), len(y) - y.sum()))
    k = min(folds, minority)
    if k < 2:
        raise FoldsExceedSamples("the smaller class has fewer than 2 rows")
    if k < folds:
        warnings.warn(f"inner CV reduced from {folds} to {k} folds (smaller class size)", stacklevel=3)
    return k


def cv_f1(spec: ModelSpec, X, y, params: dict, fold: np.ndarray, seed: int) -> float:
    scores = []
    for f in range(int(fold.max()) + 1):
        test = fold == f
        model = fit(spec, X[~test], y[~test], params, seed=seed)
        scores.append(f1_score(y[test], model.predict_array(X[test]) >= 0.5))
    return float(np.mean(scores))


def tune(spec: ModelSpec, X, y, folds: int = 20, seed: int | None = None) -> tuple[dict, float | None]:
    """Best hyperparameters by mean inner-CV F1 over ``spec.budget`` draws.

    Draw 0 is the default configuration; ties keep the earliest draw. With
    a single draw no CV is run and the score is ``None``.
    """
    seed = spec.seed if seed is None else seed
    X = np.asarray(X, float)
    y = np.asarray(y).astype(int)
    draws = spec.draws(seed)
    if len(draws) == 1:
        return draws[0], None
    fold = stratified_folds(y, inner_fold_count(y, folds), seed)
    best, best_score = draws[0], -1.0
    for params in draws:
        score = cv_f1(spec, X, y, params, fold, seed)
        if score > best_score:
            best, best_score = params, score
    return best, best_score
