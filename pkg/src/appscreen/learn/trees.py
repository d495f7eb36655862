"""CART engine and the tree ensembles built on it.

One jitted builder serves every tree model. A split maximizes
``S_L**2 / W_L + S_R**2 / W_R`` (S = weighted target sum, W = weight sum),
which is Gini reduction for 0/1 targets and variance reduction for
real-valued gradients.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from ..errors import SingleClassTrainingSet


@numba.njit(cache=True)
def _build(X, target, weight, hess, max_depth, min_leaf, max_features, seed, newton):
    n, d = X.shape
    np.random.seed(seed)
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    importance = np.zeros(d)
    leaf_of = np.full(n, -1, np.int64)

    idx = np.empty(n, np.int64)
    m = 0
    for i in range(n):
        if weight[i] > 0:
            idx[m] = i
            m += 1
    # stack entries: node, start, end, depth
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(d)
    w_total = 0.0
    for i in range(m):
        w_total += weight[idx[i]]

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        W = 0.0
        S = 0.0
        H = 0.0
        for k in range(lo, hi):
            i = idx[k]
            W += weight[i]
            S += weight[i] * target[i]
            H += weight[i] * hess[i]
        if newton:
            value[node] = S / H if H > 1e-12 else 0.0
        else:
            value[node] = S / W if W > 0 else 0.0
        cnt = hi - lo
        best_gain = 1e-12 * (abs(S) + W)
        best_f = -1
        best_t = 0.0
        if depth < max_depth and cnt >= 2 * min_leaf and cnt >= 2:
            parent = S * S / W
            # Candidates are visited in a fresh random order and the first one
            # visited keeps a tied gain, so no column position is favored.
            for a in range(d - 1, 0, -1):
                b = np.random.randint(0, a + 1)
                tmp = feats[a]
                feats[a] = feats[b]
                feats[b] = tmp
            n_try = min(max_features, d)
            vals = np.empty(cnt)
            for q in range(n_try):
                f = feats[q]
                for k in range(cnt):
                    vals[k] = X[idx[lo + k], f]
                order = np.argsort(vals, kind="mergesort")
                wl = 0.0
                sl = 0.0
                for k in range(cnt - 1):
                    i = idx[lo + order[k]]
                    wl += weight[i]
                    sl += weight[i] * target[i]
                    v0 = vals[order[k]]
                    v1 = vals[order[k + 1]]
                    if not v0 < v1:
                        continue
                    if k + 1 < min_leaf or cnt - k - 1 < min_leaf:
                        continue
                    wr = W - wl
                    if wl <= 0 or wr <= 0:
                        continue
                    sr = S - sl
                    gain = sl * sl / wl + sr * sr / wr - parent
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        t = 0.5 * (v0 + v1)
                        if not t < v1:
                            t = v0
                        best_t = t
        if best_f < 0:
            for k in range(lo, hi):
                leaf_of[idx[k]] = node
            continue
        # partition idx[lo:hi] on the chosen split
        a = lo
        b = hi - 1
        while a <= b:
            if X[idx[a], best_f] <= best_t:
                a += 1
            else:
                tmp = idx[a]
                idx[a] = idx[b]
                idx[b] = tmp
                b -= 1
        feature[node] = best_f
        threshold[node] = best_t
        importance[best_f] += best_gain
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes + 1
        st_lo[top] = a
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = a
        st_depth[top] = depth + 1
        top += 1
        n_nodes += 2
    if w_total > 0:
        importance /= w_total
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], importance, leaf_of)


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _ensemble_sum(X, feature, threshold, left, right, value, offsets, scale):
    """sum_t scale[t] * value_t(leaf_t(x)) over trees packed end to end."""
    n = X.shape[0]
    out = np.zeros(n)
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += scale[t] * value[base + node]
    return out


class Tree:
    """A fitted binary tree (arrays as in the builder)."""

    def __init__(self, feature, threshold, left, right, value, importance=None):
        self.feature = np.asarray(feature, np.int64)
        self.threshold = np.asarray(threshold, float)
        self.left = np.asarray(left, np.int64)
        self.right = np.asarray(right, np.int64)
        self.value = np.asarray(value, float)
        self.importance = None if importance is None else np.asarray(importance, float)

    @classmethod
    def fit(cls, X, target, weight=None, hess=None, max_depth=3, min_samples_leaf=1,
            max_features=None, seed=0, newton=False):
        X = np.ascontiguousarray(X, dtype=float)
        n, d = X.shape
        target = np.ascontiguousarray(target, dtype=float)
        weight = np.ones(n) if weight is None else np.ascontiguousarray(weight, dtype=float)
        hess = np.ones(n) if hess is None else np.ascontiguousarray(hess, dtype=float)
        mf = d if max_features is None else int(max(1, min(d, max_features)))
        depth = 2**30 if max_depth is None else int(max_depth)
        f, t, l, r, v, imp, leaf_of = _build(X, target, weight, hess, depth,
                                             int(max(1, min_samples_leaf)), mf, int(seed) % (2**32), newton)
        tree = cls(f, t, l, r, v, imp)
        tree.train_leaf = leaf_of
        return tree

    def apply(self, X):
        return _apply(np.ascontiguousarray(X, dtype=float), self.feature, self.threshold, self.left, self.right)

    def predict(self, X):
        return self.value[self.apply(X)]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), np.int64)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, obj) -> "Tree":
        return cls(obj["feature"], obj["threshold"], obj["left"], obj["right"], obj["value"])


def _pack(trees):
    offsets = np.zeros(len(trees) + 1, np.int64)
    offsets[1:] = np.cumsum([len(t.feature) for t in trees])
    cat = lambda name: np.concatenate([getattr(t, name) for t in trees]) if trees else np.zeros(0)
    return (cat("feature").astype(np.int64), cat("threshold").astype(float), cat("left").astype(np.int64),
            cat("right").astype(np.int64), cat("value").astype(float), offsets)


def _check_binary(y):
    y = np.asarray(y)
    if y.size == 0 or np.unique(y).size < 2:
        raise SingleClassTrainingSet("training labels contain a single class")
    return y.astype(float)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _max_features(spec, d: int) -> int:
    if spec is None:
        return d
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    if spec == "log2":
        return max(1, int(math.log2(d))) if d > 1 else 1
    if isinstance(spec, float) and spec <= 1.0:
        return max(1, int(spec * d))
    return max(1, min(d, int(spec)))


class DecisionTree:
    name = "cart"

    def __init__(self, max_depth=5, min_samples_leaf=1, max_features=None, seed=0):
        self.max_depth = None if max_depth is None else int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.max_features = max_features
        self.seed = int(seed)

    def fit(self, X, y, sample_weight=None):
        y = _check_binary(y)
        X = np.asarray(X, float)
        self.tree_ = Tree.fit(X, y, sample_weight, max_depth=self.max_depth,
                              min_samples_leaf=self.min_samples_leaf,
                              max_features=_max_features(self.max_features, X.shape[1]), seed=self.seed)
        self.n_features_ = X.shape[1]
        return self

    def predict_proba(self, X):
        return np.clip(self.tree_.predict(X), 0.0, 1.0)

    @property
    def feature_importances_(self):
        imp = self.tree_.importance
        return imp / imp.sum() if imp.sum() > 0 else imp

    def used_features(self):
        return self.tree_.used_features()

    def params(self):
        return {"max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf,
                "max_features": self.max_features, "seed": self.seed}

    def state(self):
        return {"tree": self.tree_.to_dict(), "n_features": self.n_features_}

    def load_state(self, state):
        self.tree_ = Tree.from_dict(state["tree"])
        self.n_features_ = state["n_features"]
        return self


class RandomForest:
    name = "random_forest"

    def __init__(self, n_estimators=100, max_depth=6, max_features="sqrt", min_samples_leaf=1,
                 bootstrap=True, seed=0):
        self.n_estimators = int(n_estimators)
        self.max_depth = None if max_depth is None else int(max_depth)
        self.max_features = max_features
        self.min_samples_leaf = int(min_samples_leaf)
        self.bootstrap = bool(bootstrap)
        self.seed = int(seed)

    def fit(self, X, y, sample_weight=None):
        y = _check_binary(y)
        X = np.ascontiguousarray(X, dtype=float)
        n, d = X.shape
        mf = _max_features(self.max_features, d)
        rng = np.random.default_rng(self.seed)
        base_w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        self.trees_ = []
        imp = np.zeros(d)
        for t in range(self.n_estimators):
            w = base_w * np.bincount(rng.integers(0, n, n), minlength=n) if self.bootstrap else base_w
            tree = Tree.fit(X, y, w, max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                            max_features=mf, seed=int(rng.integers(0, 2**31)))
            s = tree.importance.sum()
            if s > 0:
                imp += tree.importance / s
            self.trees_.append(tree)
        self.feature_importances_ = imp / self.n_estimators
        self.n_features_ = d
        self._packed = None
        return self

    def predict_proba(self, X):
        if getattr(self, "_packed", None) is None:
            self._packed = _pack(self.trees_)
        f, t, l, r, v, off = self._packed
        scale = np.full(len(self.trees_), 1.0 / len(self.trees_))
        return np.clip(_ensemble_sum(np.ascontiguousarray(X, dtype=float), f, t, l, r, v, off, scale), 0.0, 1.0)

    def used_features(self):
        return set().union(*(t.used_features() for t in self.trees_))

    def params(self):
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth,
                "max_features": self.max_features, "min_samples_leaf": self.min_samples_leaf,
                "bootstrap": self.bootstrap, "seed": self.seed}

    def state(self):
        return {"trees": [t.to_dict() for t in self.trees_], "n_features": self.n_features_}

    def load_state(self, state):
        self.trees_ = [Tree.from_dict(t) for t in state["trees"]]
        self.n_features_ = state["n_features"]
        self._packed = None
        return self


class AdaBoost:
    """Discrete SAMME boosting of depth-1 trees; P(y=1) = sigmoid(sum alpha_m h_m)."""

    name = "adaboost"

    def __init__(self, n_estimators=50, learning_rate=1.0, seed=0):
        self.n_estimators = int(n_estimators)
        self.learning_rate = float(learning_rate)
        self.seed = int(seed)

    def fit(self, X, y):
        y = _check_binary(y)
        X = np.ascontiguousarray(X, dtype=float)
        n = len(y)
        sign = 2 * y - 1
        w = np.full(n, 1.0 / n)
        self.trees_, self.alphas_ = [], []
        for m in range(self.n_estimators):
            tree = Tree.fit(X, y, w, max_depth=1, seed=self.seed + m)
            h = np.where(tree.value[tree.apply(X)] >= 0.5, 1.0, -1.0)
            miss = h != sign
            err = float(w[miss].sum() / w.sum())
            if err >= 0.5:
                if not self.trees_:
                    self.trees_.append(tree)
                    self.alphas_.append(0.0)
                break
            err = max(err, 1e-10)
            alpha = self.learning_rate * math.log((1 - err) / err)
            self.trees_.append(tree)
            self.alphas_.append(alpha)
            if err <= 1e-10:
                break
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        self.n_features_ = X.shape[1]
        return self

    def decision_function(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for tree, alpha in zip(self.trees_, self.alphas_):
            out += alpha * np.where(tree.predict(X) >= 0.5, 1.0, -1.0)
        return out

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def used_features(self):
        return set().union(*(t.used_features() for t in self.trees_))

    def params(self):
        return {"n_estimators": self.n_estimators, "learning_rate": self.learning_rate, "seed": self.seed}

    def state(self):
        return {"trees": [t.to_dict() for t in self.trees_], "alphas": list(self.alphas_),
                "n_features": self.n_features_}

    def load_state(self, state):
        self.trees_ = [Tree.from_dict(t) for t in state["trees"]]
        self.alphas_ = list(state["alphas"])
        self.n_features_ = state["n_features"]
        return self


def _logloss(y, F):
    # mean of log(1 + exp(-s F)), s = 2y - 1, computed stably
    z = -(2 * y - 1) * F
    return float(np.mean(np.logaddexp(0.0, z)))


class GradientBoosting:
    """Logistic-loss gradient boosting with Newton leaf values and shrinkage.

    A round whose shrunken step would raise the training loss is halved until
    it does not (at most 30 times), so ``train_loss_`` never increases.
    """

    name = "gbt"

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=3, min_samples_leaf=1,
                 subsample=1.0, seed=0):
        self.n_estimators = int(n_estimators)
        self.learning_rate = float(learning_rate)
        self.max_depth = None if max_depth is None else int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.subsample = float(subsample)
        self.seed = int(seed)

    def fit(self, X, y):
        y = _check_binary(y)
        X = np.ascontiguousarray(X, dtype=float)
        n = len(y)
        prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        self.init_ = math.log(prior / (1 - prior))
        F = np.full(n, self.init_)
        rng = np.random.default_rng(self.seed)
        self.trees_, self.scales_ = [], []
        self.train_loss_ = [_logloss(y, F)]
        for m in range(self.n_estimators):
            p = _sigmoid(F)
            g = y - p
            h = np.maximum(p * (1 - p), 1e-12)
            w = np.ones(n)
            if self.subsample < 1.0:
                w = (rng.random(n) < self.subsample).astype(float)
                if w.sum() < 2:
                    w = np.ones(n)
            tree = Tree.fit(X, g, w, h, max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                            seed=int(rng.integers(0, 2**31)), newton=True)
            step = tree.predict(X)
            scale = self.learning_rate
            current = self.train_loss_[-1]
            for _ in range(30):
                trial = _logloss(y, F + scale * step)
                if trial <= current:
                    break
                scale *= 0.5
            else:
                scale = 0.0
                trial = current
            F = F + scale * step
            self.trees_.append(tree)
            self.scales_.append(scale)
            self.train_loss_.append(trial)
        self.n_features_ = X.shape[1]
        self._packed = None
        return self

    def decision_function(self, X):
        if getattr(self, "_packed", None) is None:
            self._packed = _pack(self.trees_)
        f, t, l, r, v, off = self._packed
        X = np.ascontiguousarray(X, dtype=float)
        if not self.trees_:
            return np.full(X.shape[0], self.init_)
        return self.init_ + _ensemble_sum(X, f, t, l, r, v, off, np.asarray(self.scales_, float))

    def staged_decision(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        F = np.full(X.shape[0], self.init_)
        yield F.copy()
        for tree, scale in zip(self.trees_, self.scales_):
            F = F + scale * tree.predict(X)
            yield F.copy()

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def used_features(self):
        return set().union(*(t.used_features() for t in self.trees_)) if self.trees_ else set()

    def params(self):
        return {"n_estimators": self.n_estimators, "learning_rate": self.learning_rate,
                "max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf,
                "subsample": self.subsample, "seed": self.seed}

    def state(self):
        return {"init": self.init_, "trees": [t.to_dict() for t in self.trees_],
                "scales": list(self.scales_), "n_features": self.n_features_}

    def load_state(self, state):
        self.init_ = state["init"]
        self.trees_ = [Tree.from_dict(t) for t in state["trees"]]
        self.scales_ = list(state["scales"])
        self.n_features_ = state["n_features"]
        self._packed = None
        return self
