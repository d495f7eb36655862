"""Model registry, search spaces, fitted-model contract and serialization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, FeatureContractError
from .linear import KNN, Dummy, GaussianNB, Logit
from .trees import AdaBoost, DecisionTree, GradientBoosting, RandomForest

ALGORITHMS = {
    "dummy": Dummy,
    "logit": Logit,
    "knn": KNN,
    "gaussian_nb": GaussianNB,
    "cart": DecisionTree,
    "random_forest": RandomForest,
    "adaboost": AdaBoost,
    "gbt": GradientBoosting,
}
SEEDED = {"cart", "random_forest", "adaboost", "gbt"}


@dataclass(frozen=True)
class Param:
    """One bounded search dimension: ``int``, ``float`` (optionally log-scaled) or ``choice``."""

    kind: str
    low: float | None = None
    high: float | None = None
    log: bool = False
    choices: tuple = ()

    def __post_init__(self):
        if self.kind == "choice":
            if not self.choices:
                raise ConfigError("choice parameter needs at least one option")
        elif self.kind in ("int", "float"):
            if self.low is None or self.high is None or not self.low <= self.high:
                raise ConfigError(f"bad bounds [{self.low}, {self.high}]")
            if self.log and self.low <= 0:
                raise ConfigError("log-scaled parameter needs a positive lower bound")
        else:
            raise ConfigError(f"unknown parameter kind {self.kind!r}")

    def sample(self, rng: np.random.Generator):
        if self.kind == "choice":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.kind == "int":
            if self.log:
                return int(round(math.exp(rng.uniform(math.log(self.low), math.log(self.high)))))
            return int(rng.integers(int(self.low), int(self.high) + 1))
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def to_json(self) -> dict:
        if self.kind == "choice":
            return {"type": "choice", "choices": list(self.choices)}
        return {"type": self.kind, "low": self.low, "high": self.high, "log": self.log}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Param":
        if obj["type"] == "choice":
            return cls("choice", choices=tuple(obj["choices"]))
        return cls(obj["type"], obj["low"], obj["high"], bool(obj.get("log", False)))


DEFAULT_SPACES: dict[str, dict[str, Param]] = {
    "dummy": {},
    "logit": {"C": Param("float", 1e-3, 1e2, log=True)},
    "knn": {"n_neighbors": Param("int", 1, 25), "weights": Param("choice", choices=("uniform", "distance"))},
    "gaussian_nb": {"var_smoothing": Param("float", 1e-11, 1e-1, log=True)},
    "cart": {"max_depth": Param("int", 1, 8), "min_samples_leaf": Param("int", 1, 10)},
    "random_forest": {"n_estimators": Param("int", 50, 300), "max_depth": Param("int", 2, 8),
                      "max_features": Param("choice", choices=("sqrt", "log2")),
                      "min_samples_leaf": Param("int", 1, 5)},
    "adaboost": {"n_estimators": Param("int", 20, 200), "learning_rate": Param("float", 0.01, 1.0, log=True)},
    "gbt": {"n_estimators": Param("int", 20, 200), "learning_rate": Param("float", 0.01, 0.3, log=True),
            "max_depth": Param("int", 1, 4), "min_samples_leaf": Param("int", 1, 10),
            "subsample": Param("float", 0.5, 1.0)},
}
DEFAULT_PARAMS: dict[str, dict] = {
    "dummy": {},
    "logit": {"C": 1.0},
    "knn": {"n_neighbors": 5, "weights": "uniform"},
    "gaussian_nb": {"var_smoothing": 1e-9},
    "cart": {"max_depth": 5, "min_samples_leaf": 1},
    "random_forest": {"n_estimators": 100, "max_depth": 6, "max_features": "sqrt", "min_samples_leaf": 1},
    "adaboost": {"n_estimators": 50, "learning_rate": 1.0},
    "gbt": {"n_estimators": 100, "learning_rate": 0.1, "max_depth": 3, "min_samples_leaf": 1, "subsample": 1.0},
}


@dataclass
class ModelSpec:
    """An algorithm plus the random-search space and budget used to tune it.

    Draw 0 of every search is ``defaults``; later draws sample ``space``.
    """

    algorithm: str
    budget: int = 10
    seed: int = 0
    space: dict[str, Param] | None = None
    defaults: dict | None = None
    name: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.space is None:
            self.space = dict(DEFAULT_SPACES[self.algorithm])
        if self.algorithm == "dummy":
            self.space = {}
        if self.defaults is None:
            self.defaults = dict(DEFAULT_PARAMS[self.algorithm])
        if self.budget < 1:
            raise ConfigError("tuning budget must be at least 1")
        if self.name is None:
            self.name = self.algorithm

    def draws(self, seed: int | None = None) -> list[dict]:
        rng = np.random.default_rng([self.seed if seed is None else seed, 101])
        out = [dict(self.defaults)]
        if not self.space:
            return out
        for _ in range(self.budget - 1):
            params = dict(self.defaults)
            params.update({k: p.sample(rng) for k, p in sorted(self.space.items())})
            out.append(params)
        return out

    def to_json(self) -> dict:
        return {"algorithm": self.algorithm, "name": self.name, "budget": self.budget, "seed": self.seed,
                "space": {k: p.to_json() for k, p in self.space.items()}, "defaults": self.defaults}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModelSpec":
        if isinstance(obj, str):
            return cls(obj)
        space = obj.get("space")
        return cls(obj["algorithm"], int(obj.get("budget", 10)), int(obj.get("seed", 0)),
                   None if space is None else {k: Param.from_json(v) for k, v in space.items()},
                   obj.get("defaults"), obj.get("name"))


def _make(algorithm: str, params: Mapping, seed: int):
    kwargs = dict(params)
    if algorithm in SEEDED:
        kwargs["seed"] = seed
    return ALGORITHMS[algorithm](**kwargs)


@dataclass
class TrainedModel:
    """A fitted estimator bound to an ordered feature-name contract."""

    algorithm: str
    params: dict
    feature_names: tuple[str, ...]
    estimator: object = field(repr=False)

    def _check(self, names: Sequence[str]) -> None:
        if tuple(names) != self.feature_names:
            raise FeatureContractError(
                f"model expects {len(self.feature_names)} features {list(self.feature_names)[:5]}..., "
                f"got {list(names)[:5]}...")

    def predict_proba(self, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
        """P(depressed) per row.

        ``X`` is a FeatureMatrix, a name->value mapping, or an array whose
        column names are given in ``feature_names``.
        """
        if hasattr(X, "feature_names") and hasattr(X, "values"):
            self._check(X.feature_names)
            return self.predict_array(X.values)
        if isinstance(X, Mapping):
            self._check(list(X))
            return self.predict_array(np.asarray([list(X.values())], float))
        if feature_names is None:
            raise FeatureContractError("raw arrays need explicit feature names")
        self._check(feature_names)
        return self.predict_array(np.atleast_2d(np.asarray(X, float)))

    def predict_array(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise FeatureContractError(f"expected {len(self.feature_names)} columns, got shape {X.shape}")
        return np.clip(self.estimator.predict_proba(X), 0.0, 1.0)

    def predict(self, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
        return (self.predict_proba(X, feature_names) >= 0.5).astype(int)

    def used_features(self) -> set[str]:
        return {self.feature_names[i] for i in self.estimator.used_features()}

    def to_json(self) -> str:
        return json.dumps({"algorithm": self.algorithm, "params": self.params,
                           "feature_names": list(self.feature_names), "state": self.estimator.state()})

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        obj = json.loads(text)
        params = dict(obj["params"])
        seed = params.pop("seed", 0)
        est = _make(obj["algorithm"], params, seed).load_state(obj["state"])
        return cls(obj["algorithm"], obj["params"], tuple(obj["feature_names"]), est)


def fit(spec: ModelSpec | str, X, y, hyperparams: Mapping | None = None,
        feature_names: Sequence[str] | None = None, seed: int | None = None) -> TrainedModel:
    """Fit one algorithm with explicit hyperparameters (defaults when omitted)."""
    spec = ModelSpec(spec) if isinstance(spec, str) else spec
    if hasattr(X, "feature_names") and hasattr(X, "values"):
        feature_names = X.feature_names
        X = X.values
    X = np.asarray(X, float)
    if feature_names is None:
        feature_names = [f"x{i}" for i in range(X.shape[1])]
    params = dict(spec.defaults)
    params.update(hyperparams or {})
    params.pop("seed", None)
    seed = spec.seed if seed is None else int(seed)
    est = _make(spec.algorithm, params, seed).fit(X, np.asarray(y))
    stored = dict(params, seed=seed) if spec.algorithm in SEEDED else params
    return TrainedModel(spec.algorithm, stored, tuple(feature_names), est)
