"""Bagging, stacking and voting ensembles over the base learners, plus
greedy forward selection and backward pruning of members."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence, Union

import numpy as np

from . import learners
from .learners import LearnerSpec, TrainedModel, _register
from .metaopt import nelder_mead


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class BaggingSpec:
    base: Any
    M: int = 10
    max_samples: float = 1.0
    max_features: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise EnsembleError("M must be an integer >= 1")
        for name in ("max_samples", "max_features"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise EnsembleError(f"{name} must lie in (0, 1], got {v}")
        object.__setattr__(self, "M", int(self.M))

    def to_dict(self) -> dict:
        return {
            "family": "bagging",
            "base": spec_to_dict(self.base),
            "M": self.M,
            "max_samples": self.max_samples,
            "max_features": self.max_features,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class StackingSpec:
    sub_learners: tuple
    meta: Any = field(default_factory=lambda: LearnerSpec("linear"))
    oof_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sub_learners", tuple(self.sub_learners))
        if not self.sub_learners:
            raise EnsembleError("stacking needs at least one sub-learner")
        if self.oof_folds < 2:
            raise EnsembleError("oof_folds must be >= 2")

    def to_dict(self) -> dict:
        return {
            "family": "stacking",
            "sub_learners": [spec_to_dict(s) for s in self.sub_learners],
            "meta": spec_to_dict(self.meta),
            "oof_folds": self.oof_folds,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class VotingSpec:
    members: tuple
    weights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise EnsembleError("voting needs at least one member")
        w = (1.0,) * len(self.members) if self.weights is None else tuple(float(x) for x in self.weights)
        if len(w) != len(self.members):
            raise EnsembleError("weight count must equal member count")
        if any(x < 0 or math.isnan(x) for x in w):
            raise EnsembleError("weights must be >= 0")
        if sum(w) <= 0:
            raise EnsembleError("weights must not sum to 0")
        object.__setattr__(self, "weights", w)

    def to_dict(self) -> dict:
        return {
            "family": "voting",
            "members": [spec_to_dict(s) for s in self.members],
            "weights": list(self.weights),
        }


ModelSpec = Union[LearnerSpec, BaggingSpec, StackingSpec, VotingSpec]


def spec_to_dict(spec: ModelSpec) -> dict:
    return spec.to_dict()


def spec_from_dict(d: dict) -> ModelSpec:
    fam = d.get("family")
    if fam == "bagging":
        return BaggingSpec(
            spec_from_dict(d["base"]), d.get("M", 10), d.get("max_samples", 1.0), d.get("max_features", 1.0), d.get("seed", 0)
        )
    if fam == "stacking":
        meta = spec_from_dict(d["meta"]) if "meta" in d else LearnerSpec("linear")
        return StackingSpec(tuple(spec_from_dict(s) for s in d["sub_learners"]), meta, d.get("oof_folds", 5), d.get("seed", 0))
    if fam == "voting":
        return VotingSpec(tuple(spec_from_dict(s) for s in d["members"]), d.get("weights"))
    return LearnerSpec.from_dict(d)


def random_forest(M: int = 100, max_features: float = 1 / 3, seed: int = 0, **tree_params) -> BaggingSpec:
    """Random-forest style bagging of CART with per-member feature subsets."""
    return BaggingSpec(LearnerSpec("cart", tree_params), M, 1.0, max_features, seed)


# --------------------------------------------------------------------------
# bagging


def bootstrap_sample(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """ceil(rate*n) row ids drawn uniformly with replacement."""
    if n < 1:
        raise EnsembleError("n must be >= 1")
    if not 0 < rate <= 1:
        raise EnsembleError(f"rate must lie in (0, 1], got {rate}")
    return rng.integers(0, n, size=math.ceil(rate * n))


def with_seed(spec: ModelSpec, seed: int) -> ModelSpec:
    """Copy of ``spec`` with its top-level seed replaced (voting has none)."""
    if isinstance(spec, LearnerSpec):
        return spec.with_seed(seed)
    if isinstance(spec, BaggingSpec):
        return BaggingSpec(spec.base, spec.M, spec.max_samples, spec.max_features, seed)
    if isinstance(spec, StackingSpec):
        return StackingSpec(spec.sub_learners, spec.meta, spec.oof_folds, seed)
    return spec


@_register
class BaggingModel(TrainedModel):
    kind = "bagging"

    def __init__(self, spec, n_features, members: Sequence[tuple[np.ndarray, TrainedModel]]):
        super().__init__(spec, n_features)
        self.members = [(np.asarray(f, dtype=np.int64), m) for f, m in members]

    def member_predictions(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.array([m.predict(X[:, f]) for f, m in self.members])

    def _predict(self, X):
        return self.member_predictions(X).mean(axis=0)

    def _state(self):
        return {"members": [{"features": f.tolist(), "model": m.to_dict()} for f, m in self.members]}

    @classmethod
    def _from_state(cls, doc):
        members = [(m["features"], learners.model_from_dict(m["model"])) for m in doc["state"]["members"]]
        return cls(spec_from_dict(doc["spec"]), doc["n_features"], members)


def fit_bagging(spec: BaggingSpec, X, y, fit_member: Callable | None = None) -> BaggingModel:
    """M members, each on a with-replacement resample and its own feature subset
    of size ceil(max_features * p); the prediction is the member mean."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    n_feat = math.ceil(spec.max_features * p)
    if n_feat < 1:
        raise EnsembleError("feature subset size is 0")
    fit_member = fit_member or fit_model
    members = []
    for child in np.random.SeedSequence(spec.seed).spawn(spec.M):
        rng = np.random.default_rng(child)
        rows = bootstrap_sample(n, spec.max_samples, rng)
        feats = np.sort(rng.choice(p, n_feat, replace=False)) if n_feat < p else np.arange(p)
        seed = int(rng.integers(0, 2**31 - 1))
        member = fit_member(with_seed(spec.base, seed), X[np.ix_(rows, feats)], y[rows])
        members.append((feats, member))
    return BaggingModel(spec, p, members)


# --------------------------------------------------------------------------
# stacking


@dataclass(frozen=True)
class OofRecord:
    """One out-of-fold fit: which sub-learner, which rows it saw and predicted."""

    sub_learner: int
    fold: int
    train_rows: np.ndarray
    predicted_rows: np.ndarray


@_register
class StackingModel(TrainedModel):
    kind = "stacking"

    def __init__(self, spec, n_features, subs, meta, meta_features=None, audit=None):
        super().__init__(spec, n_features)
        self.subs = list(subs)
        self.meta = meta
        self.meta_features = meta_features
        self.audit = audit or []

    def level0(self, X) -> np.ndarray:
        return np.column_stack([m.predict(X) for m in self.subs])

    def _predict(self, X):
        return self.meta.predict(self.level0(X))

    def _state(self):
        return {"subs": [m.to_dict() for m in self.subs], "meta": self.meta.to_dict()}

    @classmethod
    def _from_state(cls, doc):
        s = doc["state"]
        subs = [learners.model_from_dict(m) for m in s["subs"]]
        return cls(spec_from_dict(doc["spec"]), doc["n_features"], subs, learners.model_from_dict(s["meta"]))


def oof_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % folds
    return out


def fit_stacking(spec: StackingSpec, X, y) -> StackingModel:
    """Level-1 training rows are out-of-fold level-0 predictions, so no
    sub-learner ever predicts a row it was fit on. The sub-learners used at
    predict time are refit on every row."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n < spec.oof_folds:
        raise EnsembleError(f"need at least oof_folds={spec.oof_folds} rows, have {n}")
    fold = oof_assignment(n, spec.oof_folds, spec.seed)
    Z = np.empty((n, len(spec.sub_learners)))
    audit = []
    for j, sub in enumerate(spec.sub_learners):
        for f in range(spec.oof_folds):
            test = np.flatnonzero(fold == f)
            train = np.flatnonzero(fold != f)
            Z[test, j] = fit_model(sub, X[train], y[train]).predict(X[test])
            audit.append(OofRecord(j, f, train, test))
    meta = fit_model(spec.meta, Z, y)
    subs = [fit_model(s, X, y) for s in spec.sub_learners]
    return StackingModel(spec, X.shape[1], subs, meta, Z, audit)


# --------------------------------------------------------------------------
# voting


def vote_average(spec: VotingSpec | Sequence[float], member_predictions) -> np.ndarray:
    """Weighted mean sum(w_i h_i) / sum(w_i); the plain mean when weights are equal."""
    w = np.asarray(spec.weights if isinstance(spec, VotingSpec) else spec, dtype=np.float64)
    P = np.asarray(member_predictions, dtype=np.float64)
    if P.shape[0] != w.size:
        raise EnsembleError("one prediction row per member is required")
    if w.sum() <= 0:
        raise EnsembleError("weights must not sum to 0")
    if np.all(w == w[0]):
        return P.mean(axis=0)
    return np.tensordot(w, P, axes=1) / w.sum()


def vote_majority(label_votes: Sequence, weights: Sequence[float] | None = None):
    """Class with the largest weighted vote; ties go to the lowest class in sort order."""
    if len(label_votes) == 0:
        raise EnsembleError("empty vote set")
    w = np.ones(len(label_votes)) if weights is None else np.asarray(weights, dtype=np.float64)
    classes = sorted(set(label_votes))
    totals = [sum(wi for v, wi in zip(label_votes, w) if v == c) for c in classes]
    return classes[int(np.argmax(totals))]


@_register
class VotingModel(TrainedModel):
    kind = "voting"

    def __init__(self, spec, n_features, members):
        super().__init__(spec, n_features)
        self.members = list(members)

    def member_predictions(self, X) -> np.ndarray:
        return np.array([m.predict(X) for m in self.members])

    def _predict(self, X):
        return vote_average(self.spec, self.member_predictions(X))

    def _state(self):
        return {"members": [m.to_dict() for m in self.members]}

    @classmethod
    def _from_state(cls, doc):
        members = [learners.model_from_dict(m) for m in doc["state"]["members"]]
        return cls(spec_from_dict(doc["spec"]), doc["n_features"], members)


def fit_voting(spec: VotingSpec, X, y) -> VotingModel:
    X = np.asarray(X, dtype=np.float64)
    return VotingModel(spec, X.shape[1], [fit_model(m, X, y) for m in spec.members])


# --------------------------------------------------------------------------
# member selection


@dataclass
class SelectionResult:
    selected: list
    scores: list[float]
    steps: list[tuple[int, float, bool]]  # (candidate index, delta, accepted)


def greedy_forward_select(
    candidates: Sequence, evaluate: Callable[[list], float], min_keep: int = 1
) -> SelectionResult:
    """Walk the best-first candidate list, keeping a candidate only when it
    raises the score (a zero gain is rejected). The first ``min_keep``
    candidates are always kept."""
    if not candidates:
        raise EnsembleError("empty candidate list")
    min_keep = max(1, min(min_keep, len(candidates)))
    selected = list(candidates[:min_keep])
    score = evaluate(selected)
    scores = [score]
    steps = [(i, 0.0, True) for i in range(min_keep)]
    for i in range(min_keep, len(candidates)):
        trial = evaluate(selected + [candidates[i]])
        delta = trial - score
        accepted = bool(delta > 0)
        steps.append((i, float(delta), accepted))
        if accepted:
            selected.append(candidates[i])
            score = trial
            scores.append(score)
    return SelectionResult(selected, scores, steps)


@dataclass
class PruneResult:
    spec: VotingSpec
    removed: list[int]
    scores: list[float]
    refined_score: float


def refine_weights(spec: VotingSpec, evaluate: Callable[[VotingSpec], float], budget: int = 200) -> tuple[VotingSpec, float]:
    """Nelder-Mead over weights in [0, 1], started from equal weights;
    the result is normalized to sum to 1."""
    m = len(spec.members)

    def f(w):
        if w.sum() <= 0:
            return -math.inf
        return evaluate(VotingSpec(spec.members, tuple(w)))

    start = np.full(m, 1.0 / m)
    res = nelder_mead(f, start, np.zeros(m), np.ones(m), budget=budget, tol=1e-6, step=0.1)
    base = f(start)
    w = res.best.values if res.best.fitness > base else start
    w = w / w.sum()
    return VotingSpec(spec.members, tuple(float(x) for x in w)), max(base, res.best.fitness)


def backward_prune_voting(
    spec: VotingSpec,
    evaluate: Callable[[VotingSpec], float],
    refine: bool = True,
    refine_budget: int = 200,
) -> PruneResult:
    """Drop, one at a time, the member whose removal raises the score most,
    while some removal raises it; then refine the survivors' weights."""
    if len(spec.members) < 2:
        raise EnsembleError("pruning needs at least 2 members")
    members = list(spec.members)
    weights = list(spec.weights)
    idx = list(range(len(members)))
    score = evaluate(spec)
    scores = [score]
    removed = []
    while len(idx) > 1:
        best_j, best_s = None, score
        for j in range(len(idx)):
            keep = [k for k in range(len(idx)) if k != j]
            cand = VotingSpec(tuple(members[k] for k in keep), tuple(weights[k] for k in keep))
            s = evaluate(cand)
            if s > best_s:
                best_j, best_s = j, s
        if best_j is None:
            break
        removed.append(idx.pop(best_j))
        members.pop(best_j)
        weights.pop(best_j)
        score = best_s
        scores.append(score)
    out = VotingSpec(tuple(members), tuple(weights))
    refined = score
    if refine and len(members) > 1:
        out, refined = refine_weights(out, evaluate, refine_budget)
    return PruneResult(out, removed, scores, refined)


# --------------------------------------------------------------------------


def fit_model(spec: ModelSpec, X, y) -> TrainedModel:
    if isinstance(spec, LearnerSpec):
        return learners.fit(spec, X, y)
    if isinstance(spec, BaggingSpec):
        return fit_bagging(spec, X, y)
    if isinstance(spec, StackingSpec):
        return fit_stacking(spec, X, y)
    if isinstance(spec, VotingSpec):
        return fit_voting(spec, X, y)
    raise TypeError(f"not a model spec: {spec!r}")
