"""Feature selection: binned information gain, stability selection with a
sparse logistic base learner, random-forest impurity ranking and Boruta."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.stats import binom, false_discovery_control

from .errors import ConfigError, DegenerateLabels, DepthOutOfRange, KTooLarge
from .learn.linear import _l1_logit, l1_lambda_max
from .learn.trees import RandomForest

METHODS = ("ig", "stable", "rf", "boruta")


@dataclass
class SelectionResult:
    method: str
    params: dict
    selected: list[str]
    scores: dict[str, float]
    seed: int | None = None
    # Boruta only: final decision per feature
    status: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"method": self.method, "params": self.params, "seed": self.seed,
                           "selected": self.selected, "scores": self.scores, "status": self.status},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        obj = json.loads(text)
        return cls(obj["method"], obj["params"], obj["selected"], obj["scores"], obj.get("seed"),
                   obj.get("status", {}))

    def at_threshold(self, threshold: float) -> list[str]:
        """Features whose frequency reaches ``threshold`` (stability results)."""
        return _rank({n: s for n, s in self.scores.items() if s >= threshold})


def _rank(scores: dict[str, float]) -> list[str]:
    # descending score, ascending name on ties
    return sorted(scores, key=lambda n: (-scores[n], n))


def _check_k(k: int, names: Sequence[str]) -> None:
    if k > len(names):
        raise KTooLarge(f"k={k} exceeds the {len(names)} available columns")
    if k < 1:
        raise ConfigError("k must be at least 1")


# ---------------------------------------------------------------- information gain

def equal_frequency_bins(x: np.ndarray, bins: int = 10) -> np.ndarray:
    """Bin codes from sample quantiles; duplicate edges merge, so at most ``bins`` bins."""
    x = np.asarray(x, float)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def _entropy_counts(counts: np.ndarray, log_base: float) -> float:
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() / math.log(log_base))


def information_gain(codes: np.ndarray, y: np.ndarray, log_base: float = math.e) -> float:
    """H(y) - H(y | codes) for discrete codes."""
    y = np.asarray(y).astype(np.int64)
    codes = np.asarray(codes).astype(np.int64)
    h_y = _entropy_counts(np.bincount(y), log_base)
    h_cond = 0.0
    n = len(y)
    for c in np.unique(codes):
        sub = y[codes == c]
        h_cond += len(sub) / n * _entropy_counts(np.bincount(sub), log_base)
    return max(h_y - h_cond, 0.0)


def ig_select(X, y, names: Sequence[str], k: int = 5, bins: int = 10, log_base: float = math.e) -> SelectionResult:
    _check_k(k, names)
    X = np.asarray(X, float)
    scores = {n: information_gain(equal_frequency_bins(X[:, j], bins), y, log_base) for j, n in enumerate(names)}
    return SelectionResult("ig", {"k": k, "bins": bins, "log_base": log_base}, _rank(scores)[:k], scores)


# ---------------------------------------------------------------- stability selection

def stratified_half(rng: np.random.Generator, y: np.ndarray) -> np.ndarray:
    """floor(n/2) row indices without replacement, classes in proportion."""
    n = len(y)
    m = n // 2
    groups = [np.flatnonzero(y == c) for c in (1, 0)]
    exact = np.array([len(g) * m / n for g in groups])
    take = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - take), kind="stable")[: m - take.sum()]:
        take[i] += 1
    return np.sort(np.concatenate([rng.choice(g, t, replace=False) for g, t in zip(groups, take)]))


@numba.njit(cache=True)
def _stability_counts(XT, y, draws, lam, cut, max_outer, tol):
    B, m = draws.shape
    d = XT.shape[0]
    counts = np.zeros(d, np.int64)
    sub = np.empty((d, m))
    cold = np.zeros(0)
    for b in range(B):
        idx = draws[b]
        for j in range(d):
            for i in range(m):
                sub[j, i] = XT[j, idx[i]]
        _, w = _l1_logit(sub, y[idx], lam, max_outer, tol, cold, 0.0)
        for j in range(d):
            if abs(w[j]) > cut:
                counts[j] += 1
    return counts


def stability_select(X, y, names: Sequence[str], threshold: float = 0.77, n_boot: int = 1000,
                     penalty_ratio: float = 0.16, seed: int = 0, cut: float = 1e-6,
                     lam: float | None = None, tol: float = 1e-4) -> SelectionResult:
    """Selection frequencies of an L1 logistic model over half-size subsamples.

    The penalty is ``penalty_ratio`` times the smallest penalty that zeroes
    every coefficient on the full supplied matrix, unless ``lam`` is given.
    """
    if not 0.5 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0.5, 1.0]")
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y).astype(float)
    lam = penalty_ratio * l1_lambda_max(X, y) if lam is None else float(lam)
    draws = np.empty((n_boot, len(y) // 2), np.int64)
    for b in range(n_boot):
        rng = np.random.default_rng([seed, b])
        for _ in range(100):
            idx = stratified_half(rng, y)
            if 0 < y[idx].sum() < len(idx):
                break
        else:
            raise DegenerateLabels("subsample draws keep missing a class")
        draws[b] = idx
    counts = _stability_counts(np.ascontiguousarray(X.T), y, draws, lam, cut, 50, tol)
    freq = {n: float(c / n_boot) for n, c in zip(names, counts)}
    params = {"threshold": threshold, "n_boot": n_boot, "penalty_ratio": penalty_ratio, "lam": lam, "cut": cut}
    result = SelectionResult("stable", params, [], freq, seed)
    result.selected = result.at_threshold(threshold)
    return result


def threshold_sweep(result: SelectionResult, start: float = 0.50, stop: float = 0.98, step: float = 0.01):
    """[(threshold, selected names)] over an inclusive grid."""
    count = int(round((stop - start) / step)) + 1
    return [(round(start + i * step, 10), result.at_threshold(round(start + i * step, 10))) for i in range(count)]


# ---------------------------------------------------------------- embedded forest ranking

def rf_embedded_select(X, y, names: Sequence[str], k: int = 5, n_estimators: int = 100,
                       max_depth: int | None = None, max_features="sqrt", seed: int = 0) -> SelectionResult:
    _check_k(k, names)
    forest = RandomForest(n_estimators=n_estimators, max_depth=max_depth, max_features=max_features,
                          seed=seed).fit(X, y)
    scores = {n: float(s) for n, s in zip(names, forest.feature_importances_)}
    params = {"k": k, "n_estimators": n_estimators, "max_depth": max_depth, "max_features": max_features}
    return SelectionResult("rf", params, _rank(scores)[:k], scores, seed)


# ---------------------------------------------------------------- Boruta

def boruta_tree_count(n_features: int, max_depth: int) -> int:
    """Automatic forest size for ``n_features`` real plus as many shadow columns."""
    twice = 2 * n_features
    return int(twice / (math.sqrt(twice) * max_depth) * 100)


def boruta_select(X, y, names: Sequence[str], max_depth: int = 5, max_iter: int = 100, alpha: float = 0.05,
                  seed: int = 0, allow_depth_override: bool = False, n_estimators: int | None = None) -> SelectionResult:
    """All-relevant selection against shuffled shadow columns.

    Each round appends a freshly shuffled copy of every column, fits a
    forest and counts a hit for each real column whose impurity importance
    beats the best shadow. Binomial tests on the hit counts then reject a
    tentative column when its lower-tail p-value survives Benjamini-Hochberg
    at ``alpha`` and confirm it when its upper-tail p-value survives
    Bonferroni over all columns.
    """
    if not 3 <= max_depth <= 7:
        if not allow_depth_override:
            raise DepthOutOfRange(f"max_depth={max_depth} outside 3..7")
        warnings.warn(f"Boruta max_depth={max_depth} is outside the usual 3..7 range", stacklevel=2)
    X = np.asarray(X, float)
    y = np.asarray(y)
    d = X.shape[1]
    decision = np.zeros(d, np.int64)  # 1 confirmed, -1 rejected, 0 tentative
    hits = np.zeros(d, np.int64)
    rng = np.random.default_rng(seed)
    trees = n_estimators or boruta_tree_count(d, max_depth)
    it = 1
    while np.any(decision == 0) and it < max_iter:
        shadow = np.column_stack([rng.permutation(X[:, j]) for j in range(d)])
        forest = RandomForest(n_estimators=max(trees, 1), max_depth=max_depth, max_features="sqrt",
                              seed=int(rng.integers(0, 2**31))).fit(np.hstack([X, shadow]), y)
        imp = forest.feature_importances_
        hits[imp[:d] > imp[d:].max()] += 1
        # tests cover every column; only tentative ones change state
        p_up = binom.sf(hits - 1, it, 0.5)
        p_down = binom.cdf(hits, it, 0.5)
        reject = false_discovery_control(p_down) <= alpha
        accept = np.minimum(p_up * d, 1.0) <= alpha
        open_ = decision == 0
        decision[open_ & accept] = 1
        decision[open_ & reject & ~accept] = -1
        it += 1
    labels = {1: "confirmed", -1: "rejected", 0: "tentative"}
    status = {n: labels[int(v)] for n, v in zip(names, decision)}
    scores = {n: float(hits[j] / max(it - 1, 1)) for j, n in enumerate(names)}
    selected = _rank({n: scores[n] for n in names if status[n] == "confirmed"})
    params = {"max_depth": max_depth, "max_iter": max_iter, "alpha": alpha, "iterations": it - 1}
    return SelectionResult("boruta", params, selected, scores, seed, status)


def run_selection(method: str, X, y, names: Sequence[str], seed: int = 0, **params) -> SelectionResult:
    if method == "ig":
        return ig_select(X, y, names, **params)
    if method == "stable":
        return stability_select(X, y, names, seed=seed, **params)
    if method == "rf":
        return rf_embedded_select(X, y, names, seed=seed, **params)
    if method == "boruta":
        return boruta_select(X, y, names, seed=seed, **params)
    if method == "none":
        return SelectionResult("none", {}, list(names), {n: 1.0 for n in names}, seed)
    raise ConfigError(f"unknown feature-selection method {method!r}")
