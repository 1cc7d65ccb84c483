"""Base regression learners: least squares, KNN, CART, Extra Trees and
regularised gradient-boosted trees."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.spatial.distance import cdist

from . import _tree

FAMILIES = ("linear", "knn", "cart", "extratree", "gbt")
UNLIMITED_DEPTH = 10_000


class SpecError(ValueError):
    """Invalid learner family or hyper-parameter."""


def _int_at_least(lo: int):
    def check(name, v):
        if v is None or isinstance(v, bool) or not float(v).is_integer() or v < lo:
            raise SpecError(f"{name} must be an integer >= {lo}, got {v!r}")
        return int(v)

    return check


def _optional_depth(name, v):
    if v is None:
        return None
    return _int_at_least(0)(name, v)


def _real(lo: float, hi: float = math.inf, lo_open: bool = False):
    def check(name, v):
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise SpecError(f"{name} must be a number, got {v!r}") from None
        ok = (v > lo if lo_open else v >= lo) and v <= hi
        if not ok or math.isnan(v):
            left = "(" if lo_open else "["
            raise SpecError(f"{name}={v} outside {left}{lo}, {hi}]")
        return v

    return check


def _optional_real(name, v):
    return None if v is None else _real(-math.inf)(name, v)


def _flag(name, v):
    if not isinstance(v, bool):
        raise SpecError(f"{name} must be a boolean")
    return v


def _booster(name, v):
    if v not in (0, 1, "gbtree", "dart"):
        raise SpecError(f"{name} must be 0/'gbtree' or 1/'dart'")
    return {0: "gbtree", 1: "dart"}.get(v, v)


_TREE_PARAMS = {
    "max_depth": (None, _optional_depth),
    "min_samples_split": (2, _int_at_least(2)),
    "min_samples_leaf": (1, _int_at_least(1)),
}

# family -> {name: (default, validator)}; gbt names follow the XGBoost table
# (N_est, Max_d, B, eta, gamma, Min_cw, sub_s, lambda, alpha).
FAMILY_PARAMS: dict[str, dict[str, tuple[Any, Callable]]] = {
    "linear": {"ridge_fallback": (True, _flag)},
    "knn": {"K": (5, _int_at_least(1))},
    "cart": dict(_TREE_PARAMS),
    "extratree": {**_TREE_PARAMS, "n_estimators": (1, _int_at_least(1))},
    "gbt": {
        "N_est": (100, _int_at_least(1)),
        "Max_d": (6, _int_at_least(0)),
        "B": ("gbtree", _booster),
        "eta": (0.3, _real(0.0, 1.0, lo_open=True)),
        "gamma": (0.0, _real(0.0)),
        "Min_cw": (1.0, _real(0.0)),
        "sub_s": (1.0, _real(0.0, 1.0, lo_open=True)),
        "lambda": (1.0, _real(0.0)),
        "alpha": (0.0, _real(0.0)),
        "base_score": (None, _optional_real),
    },
}


@dataclass(frozen=True)
class LearnerSpec:
    family: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown learner family {self.family!r}")
        allowed = FAMILY_PARAMS[self.family]
        unknown = set(self.hyperparams) - set(allowed)
        if unknown:
            raise SpecError(f"unknown hyper-parameter(s) for {self.family}: {sorted(unknown)}")
        resolved = {}
        for name, (default, check) in allowed.items():
            resolved[name] = check(name, self.hyperparams.get(name, default))
        object.__setattr__(self, "hyperparams", resolved)

    def to_dict(self) -> dict:
        return {"family": self.family, "hyperparams": dict(self.hyperparams), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerSpec":
        return cls(d["family"], dict(d.get("hyperparams", {})), int(d.get("seed", 0)))

    def with_seed(self, seed: int) -> "LearnerSpec":
        return LearnerSpec(self.family, dict(self.hyperparams), seed)


# --------------------------------------------------------------------------
# fitted models

_MODEL_KINDS: dict[str, type] = {}


def _register(cls):
    _MODEL_KINDS[cls.kind] = cls
    return cls


class TrainedModel:
    """Fitted predictor. Subclasses implement ``_predict``, ``_state`` and ``_from_state``."""

    kind = "abstract"

    def __init__(self, spec, n_features: int):
        self.spec = spec
        self.n_features = int(n_features)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, self.n_features)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got shape {X.shape}")
        if X.shape[0] == 0:
            return np.empty(0)
        return self._predict(np.ascontiguousarray(X))

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "n_features": self.n_features,
            "state": self._state(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def _state(self) -> dict:
        raise NotImplementedError


def model_from_dict(doc: dict) -> TrainedModel:
    try:
        cls = _MODEL_KINDS[doc["kind"]]
    except KeyError:
        raise ValueError(f"unknown model kind {doc.get('kind')!r}") from None
    return cls._from_state(doc)


def model_from_json(text: str) -> TrainedModel:
    return model_from_dict(json.loads(text))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature == _tree.LEAF).sum())

    def leaf_values(self) -> np.ndarray:
        return self.value[self.feature == _tree.LEAF]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _tree.apply(X, self.feature, self.threshold, self.left, self.right, self.value)

    def to_nested(self, node: int = 0) -> dict:
        if self.feature[node] == _tree.LEAF:
            return {"value": float(self.value[node]), "n": int(self.count[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "n": int(self.count[node]),
            "left": self.to_nested(int(self.left[node])),
            "right": self.to_nested(int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, doc: dict) -> "Tree":
        feat, thr, left, right, val, cnt = [], [], [], [], [], []

        def visit(d):
            i = len(feat)
            feat.append(d.get("feature", _tree.LEAF))
            thr.append(d.get("threshold", 0.0))
            left.append(_tree.LEAF)
            right.append(_tree.LEAF)
            val.append(d.get("value", 0.0))
            cnt.append(d["n"])
            if "feature" in d:
                left[i] = visit(d["left"])
                right[i] = visit(d["right"])
            return i

        visit(doc)
        return cls(
            np.asarray(feat, np.int32),
            np.asarray(thr, np.float64),
            np.asarray(left, np.int32),
            np.asarray(right, np.int32),
            np.asarray(val, np.float64),
            np.asarray(cnt, np.int32),
        )


def grow_tree(
    X,
    g,
    h,
    rows=None,
    *,
    max_depth=None,
    min_samples_split=2,
    min_samples_leaf=1,
    min_child_weight=0.0,
    reg_lambda=0.0,
    reg_alpha=0.0,
    gamma=0.0,
    random_split=False,
    seed=0,
    order=None,
) -> Tree:
    """``order`` may carry ``_tree.presort(X, rows, features)`` computed once
    for several trees on the same rows; it is copied, not consumed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    rows = np.arange(X.shape[0], dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    features = np.arange(X.shape[1], dtype=np.int64)
    depth = UNLIMITED_DEPTH if max_depth is None else int(max_depth)
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    common = (
        X,
        g,
        h,
        rows,
        features,
        depth,
        int(min_samples_split),
        int(min_samples_leaf),
        float(min_child_weight),
        float(reg_lambda),
        float(reg_alpha),
        float(gamma),
    )
    if random_split:
        out = _tree.grow_random(*common, int(seed) % (2**32))
    else:
        order, svals = _tree.presort(X, rows, features) if order is None else (order[0].copy(), order[1].copy())
        out = _tree.grow_exact(*common, order, svals)
    return Tree(*out)


@_register
class LinearModel(TrainedModel):
    kind = "linear"

    def __init__(self, spec, n_features, coef, intercept, ridge_used=False):
        super().__init__(spec, n_features)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = float(intercept)
        self.ridge_used = bool(ridge_used)

    def _predict(self, X):
        return X @ self.coef + self.intercept

    def _state(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept, "ridge_used": self.ridge_used}

    @classmethod
    def _from_state(cls, doc):
        s = doc["state"]
        return cls(LearnerSpec.from_dict(doc["spec"]), doc["n_features"], s["coef"], s["intercept"], s["ridge_used"])


def _k_nearest(d: np.ndarray, K: int) -> np.ndarray:
    """Ids of the K smallest distances; equal distances resolve to the lower id."""
    if K >= d.size:
        return np.arange(d.size)
    kth = np.partition(d, K - 1)[K - 1]
    ids = np.flatnonzero(d <= kth)
    return ids[np.argsort(d[ids], kind="stable")[:K]]


@_register
class KNNModel(TrainedModel):
    kind = "knn"
    _CHUNK = 256

    def __init__(self, spec, n_features, X, y, mean, scale):
        super().__init__(spec, n_features)
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self._Z = (self.X - self.mean) / self.scale

    def _predict(self, X):
        K = self.spec.hyperparams["K"]
        Z = (X - self.mean) / self.scale
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], self._CHUNK):
            D = cdist(Z[s : s + self._CHUNK], self._Z)
            out[s : s + self._CHUNK] = [self.y[_k_nearest(d, K)].mean() for d in D]
        return out

    def _state(self):
        return {"X": self.X.tolist(), "y": self.y.tolist(), "mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def _from_state(cls, doc):
        s = doc["state"]
        X = np.asarray(s["X"], dtype=np.float64).reshape(-1, doc["n_features"])
        return cls(LearnerSpec.from_dict(doc["spec"]), doc["n_features"], X, s["y"], s["mean"], s["scale"])


@_register
class TreeEnsembleModel(TrainedModel):
    """``base_score + scale * sum(tree predictions)``.

    A single CART/Extra tree uses one tree with scale 1, an Extra Trees forest
    averages (scale 1/n), and boosting uses scale = learning rate.
    """

    kind = "trees"

    def __init__(self, spec, n_features, trees, base_score=0.0, scale=1.0):
        super().__init__(spec, n_features)
        self.trees = list(trees)
        self.base_score = float(base_score)
        self.scale = float(scale)

    def _predict(self, X):
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.apply(X)
        return self.base_score + self.scale * total

    def _state(self):
        return {
            "base_score": self.base_score,
            "scale": self.scale,
            "trees": [t.to_nested() for t in self.trees],
        }

    @classmethod
    def _from_state(cls, doc):
        s = doc["state"]
        trees = [Tree.from_nested(t) for t in s["trees"]]
        return cls(LearnerSpec.from_dict(doc["spec"]), doc["n_features"], trees, s["base_score"], s["scale"])


# --------------------------------------------------------------------------
# fitting


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes X{X.shape} y{y.shape}")
    if X.shape[0] == 0:
        raise ValueError("cannot fit on zero rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("training data contains non-finite values")
    return X, y


def fit_linear(X, y, spec: LearnerSpec | None = None) -> LinearModel:
    """Ordinary least squares with intercept; ridge (1e-8) when rank deficient."""
    spec = spec or LearnerSpec("linear")
    X, y = _check_xy(X, y)
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    rank = np.linalg.matrix_rank(A)
    if n > p and rank == p + 1:
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
        return LinearModel(spec, p, beta[1:], beta[0])
    if not spec.hyperparams["ridge_fallback"]:
        raise np.linalg.LinAlgError(f"design matrix is rank deficient (rank {rank} < {p + 1})")
    # centred ridge so the intercept stays unpenalised
    mx, my = X.mean(axis=0), y.mean()
    Xc = X - mx
    coef = np.linalg.solve(Xc.T @ Xc + 1e-8 * np.eye(p), Xc.T @ (y - my))
    return LinearModel(spec, p, coef, my - mx @ coef, ridge_used=True)


def fit_knn(X, y, K: int | None = None, spec: LearnerSpec | None = None) -> KNNModel:
    if spec is None:
        spec = LearnerSpec("knn", {"K": 5 if K is None else K})
    X, y = _check_xy(X, y)
    K = spec.hyperparams["K"]
    if not 1 <= K <= X.shape[0]:
        raise ValueError(f"K={K} must lie in [1, {X.shape[0]}]")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return KNNModel(spec, X.shape[1], X, y, mean, scale)


def _tree_kwargs(hp):
    return dict(
        max_depth=hp["max_depth"],
        min_samples_split=hp["min_samples_split"],
        min_samples_leaf=hp["min_samples_leaf"],
    )


def fit_cart(X, y, params: dict | None = None, spec: LearnerSpec | None = None) -> TreeEnsembleModel:
    """Greedy squared-error tree with an exhaustive threshold scan."""
    spec = spec or LearnerSpec("cart", params or {})
    X, y = _check_xy(X, y)
    tree = grow_tree(X, -y, np.ones_like(y), **_tree_kwargs(spec.hyperparams))
    return TreeEnsembleModel(spec, X.shape[1], [tree])


def fit_extratree(X, y, params: dict | None = None, spec: LearnerSpec | None = None, seed: int | None = None):
    """Extremely randomised tree(s): one uniform threshold per feature per node,
    best of those kept. ``n_estimators > 1`` averages independent trees."""
    spec = spec or LearnerSpec("extratree", params or {}, 0 if seed is None else seed)
    X, y = _check_xy(X, y)
    hp = spec.hyperparams
    seeds = np.random.default_rng(spec.seed).integers(0, 2**31 - 1, size=hp["n_estimators"])
    ones = np.ones_like(y)
    trees = [grow_tree(X, -y, ones, random_split=True, seed=int(s), **_tree_kwargs(hp)) for s in seeds]
    return TreeEnsembleModel(spec, X.shape[1], trees, 0.0, 1.0 / len(trees))


def fit_gbt(X, y, params: dict | None = None, spec: LearnerSpec | None = None) -> TreeEnsembleModel:
    """Second-order boosting on squared error (h = 1).

    Each round fits a tree to g = prediction - y with leaf weight
    -soft(G, alpha) / (H + lambda), split gain reduced by gamma, child
    Hessian sums bounded below by Min_cw, and a sub_s row subsample drawn
    without replacement. Booster 'dart' is accepted and trained as 'gbtree'.
    """
    spec = spec or LearnerSpec("gbt", params or {})
    X, y = _check_xy(X, y)
    hp = spec.hyperparams
    n = X.shape[0]
    base = float(y.mean()) if hp["base_score"] is None else hp["base_score"]
    eta = hp["eta"]
    pred = np.full(n, base)
    h = np.ones(n)
    rng = np.random.default_rng(spec.seed)
    n_sub = max(1, int(round(hp["sub_s"] * n)))
    trees = []
    full_order = _tree.presort(X, np.arange(n), np.arange(X.shape[1])) if n_sub == n else None
    for _ in range(hp["N_est"]):
        rows = np.arange(n) if n_sub == n else np.sort(rng.choice(n, n_sub, replace=False))
        tree = grow_tree(
            X,
            pred - y,
            h,
            rows,
            max_depth=hp["Max_d"],
            min_samples_split=2,
            min_samples_leaf=1,
            min_child_weight=hp["Min_cw"],
            reg_lambda=hp["lambda"],
            reg_alpha=hp["alpha"],
            gamma=hp["gamma"],
            seed=int(rng.integers(0, 2**31 - 1)),
            order=full_order,
        )
        trees.append(tree)
        pred = pred + eta * tree.apply(X)
    return TreeEnsembleModel(spec, X.shape[1], trees, base, eta)


def fit(spec: LearnerSpec, X, y) -> TrainedModel:
    if spec.family == "linear":
        return fit_linear(X, y, spec=spec)
    if spec.family == "knn":
        return fit_knn(X, y, spec=spec)
    if spec.family == "cart":
        return fit_cart(X, y, spec=spec)
    if spec.family == "extratree":
        return fit_extratree(X, y, spec=spec)
    return fit_gbt(X, y, spec=spec)


def predict(model: TrainedModel, X) -> np.ndarray:
    return model.predict(X)
