"""Non-tree learners: dummy, logistic regression, k-NN, Gaussian naive Bayes,
plus the L1-penalized logistic solver used by stability selection."""
from __future__ import annotations

import numba
import numpy as np

from .trees import _check_binary, _sigmoid


class Dummy:
    """Always predicts the positive class with probability 1."""

    name = "dummy"

    def fit(self, X, y):
        _check_binary(y)
        self.n_features_ = np.asarray(X).shape[1]
        return self

    def predict_proba(self, X):
        return np.ones(np.asarray(X).shape[0])

    def used_features(self):
        return set()

    def params(self):
        return {}

    def state(self):
        return {"n_features": self.n_features_}

    def load_state(self, state):
        self.n_features_ = state["n_features"]
        return self


class Logit:
    """L2-penalized logistic regression (unpenalized intercept), Newton steps.

    Minimizes ``sum(logloss) + ||w||^2 / (2 C)``.
    """

    name = "logit"

    def __init__(self, C=1.0, max_iter=100, tol=1e-10):
        self.C = float(C)
        self.max_iter = int(max_iter)
        self.tol = float(tol)

    def fit(self, X, y, sample_weight=None):
        y = _check_binary(y)
        X = np.asarray(X, float)
        n, d = X.shape
        sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        A = np.hstack([np.ones((n, 1)), X])
        reg = np.full(d + 1, 1.0 / self.C)
        reg[0] = 0.0
        beta = np.zeros(d + 1)

        def objective(b):
            z = A @ b
            return float(sw @ np.logaddexp(0.0, -(2 * y - 1) * z) + 0.5 * reg @ (b * b))

        obj = objective(beta)
        for _ in range(self.max_iter):
            p = _sigmoid(A @ beta)
            grad = A.T @ (sw * (p - y)) + reg * beta
            H = (A * (sw * p * (1 - p))[:, None]).T @ A + np.diag(reg) + 1e-10 * np.eye(d + 1)
            step = np.linalg.solve(H, grad)
            t = 1.0
            while True:
                cand = beta - t * step
                new = objective(cand)
                if new <= obj or t < 1e-10:
                    break
                t *= 0.5
            done = obj - new <= self.tol * max(1.0, abs(obj))
            beta, obj = cand, min(new, obj)
            if done:
                break
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:].copy()
        self.n_features_ = d
        return self

    def decision_function(self, X):
        return np.asarray(X, float) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def used_features(self):
        return {int(i) for i in np.flatnonzero(self.coef_)}

    def params(self):
        return {"C": self.C}

    def state(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_, "n_features": self.n_features_}

    def load_state(self, state):
        self.coef_ = np.asarray(state["coef"], float)
        self.intercept_ = float(state["intercept"])
        self.n_features_ = state["n_features"]
        return self


class KNN:
    name = "knn"

    def __init__(self, n_neighbors=5, weights="uniform"):
        if weights not in ("uniform", "distance"):
            raise ValueError(f"unknown weights {weights!r}")
        self.n_neighbors = int(n_neighbors)
        self.weights = weights

    def fit(self, X, y):
        self.y_ = _check_binary(y)
        self.X_ = np.asarray(X, float).copy()
        self.n_features_ = self.X_.shape[1]
        return self

    def predict_proba(self, X):
        X = np.asarray(X, float)
        k = min(self.n_neighbors, len(self.y_))
        d2 = (X * X).sum(1)[:, None] - 2 * X @ self.X_.T + (self.X_ * self.X_).sum(1)[None, :]
        d2 = np.maximum(d2, 0.0)
        # stable sort: equal distances resolve to the earlier training row
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        labels = self.y_[nn]
        if self.weights == "uniform":
            return labels.mean(1)
        dist = np.sqrt(np.take_along_axis(d2, nn, 1))
        exact = dist == 0
        w = np.where(exact.any(1)[:, None], exact.astype(float), 1.0 / np.where(exact, 1.0, dist))
        return (w * labels).sum(1) / w.sum(1)

    def used_features(self):
        return set(range(self.n_features_))

    def params(self):
        return {"n_neighbors": self.n_neighbors, "weights": self.weights}

    def state(self):
        return {"X": self.X_.tolist(), "y": self.y_.tolist(), "n_features": self.n_features_}

    def load_state(self, state):
        self.X_ = np.asarray(state["X"], float).reshape(len(state["y"]), state["n_features"])
        self.y_ = np.asarray(state["y"], float)
        self.n_features_ = state["n_features"]
        return self


class GaussianNB:
    """Per-class independent Gaussians; ``var_smoothing`` times the largest
    feature variance is added to every variance."""

    name = "gaussian_nb"

    def __init__(self, var_smoothing=1e-9):
        self.var_smoothing = float(var_smoothing)

    def fit(self, X, y):
        y = _check_binary(y)
        X = np.asarray(X, float)
        eps = self.var_smoothing * max(float(X.var(axis=0).max()), 1e-300) if X.shape[1] else 0.0
        self.mean_ = np.stack([X[y == c].mean(0) for c in (0, 1)])
        self.var_ = np.stack([X[y == c].var(0) for c in (0, 1)]) + eps
        self.var_ = np.maximum(self.var_, 1e-300)
        self.log_prior_ = np.log(np.array([np.mean(y == 0), np.mean(y == 1)]))
        self.n_features_ = X.shape[1]
        return self

    def predict_proba(self, X):
        X = np.asarray(X, float)
        ll = np.stack([
            -0.5 * (np.log(2 * np.pi * self.var_[c]) + (X - self.mean_[c]) ** 2 / self.var_[c]).sum(1)
            + self.log_prior_[c]
            for c in (0, 1)
        ], axis=1)
        return _sigmoid(ll[:, 1] - ll[:, 0])

    def used_features(self):
        return set(range(self.n_features_))

    def params(self):
        return {"var_smoothing": self.var_smoothing}

    def state(self):
        return {"mean": self.mean_.tolist(), "var": self.var_.tolist(),
                "log_prior": self.log_prior_.tolist(), "n_features": self.n_features_}

    def load_state(self, state):
        self.mean_ = np.asarray(state["mean"], float).reshape(2, -1)
        self.var_ = np.asarray(state["var"], float).reshape(2, -1)
        self.log_prior_ = np.asarray(state["log_prior"], float)
        self.n_features_ = state["n_features"]
        return self


@numba.njit(cache=True)
def _soft(rho, lam):
    if rho > lam:
        return rho - lam
    if rho < -lam:
        return rho + lam
    return 0.0


@numba.njit(cache=True, fastmath=True)
def _l1_logit(XT, y, lam, max_outer, tol, w_init, b_init):
    """IRLS with coordinate descent for mean logloss + lam * ||w||_1.

    ``XT`` is the transposed design (features by rows) so each coordinate
    walks contiguous memory. The intercept is unpenalized. Within one IRLS
    step, a full sweep over all features alternates with coordinate descent
    restricted to the nonzero set, which runs on that set's weighted Gram
    matrix. ``w_init``/``b_init`` warm-start the solver (empty ``w_init``
    for a cold start). Returns (intercept, weights).
    """
    d, n = XT.shape
    if w_init.shape[0] == d:
        w = w_init.copy()
        b0 = b_init
    else:
        w = np.zeros(d)
        ybar = y.mean()
        b0 = np.log(ybar / (1.0 - ybar))
    eta = np.full(n, b0)
    for j in range(d):
        if w[j] != 0.0:
            row = XT[j]
            for i in range(n):
                eta[i] += w[j] * row[i]
    xx = np.empty(d)
    r = np.empty(n)
    h = np.empty(n)
    for outer in range(max_outer):
        hsum = 0.0
        for i in range(n):
            p = 1.0 / (1.0 + np.exp(-eta[i]))
            hi = max(p * (1.0 - p), 1e-5)
            h[i] = hi
            hsum += hi
            r[i] = (y[i] - p) / hi  # working response minus current fit
        for j in range(d):
            s = 0.0
            row = XT[j]
            for i in range(n):
                s += h[i] * row[i] * row[i]
            xx[j] = s / n
        max_change = 0.0
        for rounds in range(1000):
            # full sweep over every feature
            delta_max = 0.0
            s = 0.0
            for i in range(n):
                s += h[i] * r[i]
            d0 = s / hsum
            b0 += d0
            for i in range(n):
                r[i] -= d0
            for j in range(d):
                if xx[j] <= 0:
                    continue
                row = XT[j]
                g = 0.0
                for i in range(n):
                    g += h[i] * row[i] * r[i]
                new = _soft(g / n + xx[j] * w[j], lam) / xx[j]
                diff = new - w[j]
                if diff != 0.0:
                    for i in range(n):
                        r[i] -= diff * row[i]
                    w[j] = new
                    ad = abs(diff) * np.sqrt(xx[j])
                    if ad > delta_max:
                        delta_max = ad
            if delta_max > max_change:
                max_change = delta_max
            if delta_max < tol:
                break
            # descent on the nonzero set via its Gram matrix (slot 0 = intercept)
            act = np.flatnonzero(w != 0.0)
            k = act.shape[0] + 1
            G = np.empty((k, k))
            q = np.empty(k)
            G[0, 0] = hsum / n
            s = 0.0
            for i in range(n):
                s += h[i] * r[i]
            q[0] = s / n
            for a in range(1, k):
                ra = XT[act[a - 1]]
                s0 = 0.0
                sq = 0.0
                for i in range(n):
                    s0 += h[i] * ra[i]
                    sq += h[i] * ra[i] * r[i]
                G[0, a] = G[a, 0] = s0 / n
                q[a] = sq / n
                for b in range(1, a + 1):
                    rb = XT[act[b - 1]]
                    s = 0.0
                    for i in range(n):
                        s += h[i] * ra[i] * rb[i]
                    G[a, b] = G[b, a] = s / n
            w_start = w[act].copy()
            b_start = b0
            for it in range(100000):
                dm = 0.0
                step = q[0] / G[0, 0]
                b0 += step
                for c in range(k):
                    q[c] -= step * G[c, 0]
                for a in range(1, k):
                    j = act[a - 1]
                    gaa = G[a, a]
                    if gaa <= 0:
                        continue
                    new = _soft(q[a] + gaa * w[j], lam) / gaa
                    diff = new - w[j]
                    if diff != 0.0:
                        for c in range(k):
                            q[c] -= diff * G[c, a]
                        w[j] = new
                        ad = abs(diff) * np.sqrt(gaa)
                        if ad > dm:
                            dm = ad
                if dm < tol:
                    break
            # bring the residual in line with the active-set moves
            db = b0 - b_start
            for i in range(n):
                r[i] -= db
            for a in range(1, k):
                j = act[a - 1]
                diff = w[j] - w_start[a - 1]
                if diff != 0.0:
                    row = XT[j]
                    for i in range(n):
                        r[i] -= diff * row[i]
                    ad = abs(diff) * np.sqrt(xx[j])
                    if ad > max_change:
                        max_change = ad
        for i in range(n):
            eta[i] = b0
        for j in range(d):
            if w[j] != 0.0:
                row = XT[j]
                for i in range(n):
                    eta[i] += w[j] * row[i]
        if max_change < tol:
            break
    return b0, w


def l1_lambda_max(X, y) -> float:
    """Smallest penalty at which every coefficient is zero."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    return float(np.abs(X.T @ (y - y.mean())).max() / len(y)) if X.size else 0.0


class L1Logit:
    """Sparse logistic regression used as the stability-selection base learner."""

    def __init__(self, lam: float, max_outer: int = 50, tol: float = 1e-6):
        self.lam = float(lam)
        self.max_outer = int(max_outer)
        self.tol = float(tol)

    def fit(self, X, y):
        y = _check_binary(y)
        self.intercept_, self.coef_ = _l1_logit(np.ascontiguousarray(np.asarray(X, float).T), y, self.lam,
                                                self.max_outer, self.tol, np.zeros(0), 0.0)
        return self

    def predict_proba(self, X):
        return _sigmoid(np.asarray(X, float) @ self.coef_ + self.intercept_)
