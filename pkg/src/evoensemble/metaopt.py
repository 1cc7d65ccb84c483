"""Box-bounded metaheuristics (DE, GA, PSO, 1+1EA, Nelder-Mead) and the
hyper-parameter tuning loop built on them. Every optimizer maximizes."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
ALGORITHMS = ("de", "ga", "pso", "opo_ea", "nelder_mead")

NEG_INF = -math.inf


class BudgetExhausted(RuntimeError):
    pass


# --------------------------------------------------------------------------
# search space


@dataclass(frozen=True)
class Dim:
    name: str
    kind: str
    lower: float
    upper: float
    categories: tuple | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, INTEGER, CATEGORICAL):
            raise ValueError(f"unknown dimension kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ValueError(f"dimension {self.name}: lower must be < upper")
        if self.kind == CATEGORICAL and not self.categories:
            raise ValueError(f"categorical dimension {self.name} needs categories")


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class ParamSpace:
    dims: tuple[Dim, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        if not names:
            raise ValueError("a space needs at least one dimension")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims], dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.dims)

    def clip(self, v) -> np.ndarray:
        return np.clip(np.asarray(v, dtype=np.float64), self.lower, self.upper)

    def to_dict(self) -> dict:
        return {
            "dims": [
                {"name": d.name, "kind": d.kind, "lower": d.lower, "upper": d.upper, "categories": d.categories}
                for d in self.dims
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamSpace":
        dims = []
        for d in doc["dims"]:
            cats = d.get("categories")
            dims.append(Dim(d["name"], d["kind"], float(d["lower"]), float(d["upper"]), tuple(cats) if cats else None))
        return cls(tuple(dims))


@dataclass
class CandidateVector:
    values: np.ndarray
    fitness: float | None = None


def decode(space: ParamSpace, v) -> dict[str, Any]:
    """Map a raw vector to named hyper-parameter values.

    Integer dims round half away from zero; a categorical dim with k options
    splits [lower, upper] into k equal buckets (the top edge joins the last).
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != len(space):
        raise ValueError(f"vector has {v.size} values, space has {len(space)} dimensions")
    out: dict[str, Any] = {}
    for d, x in zip(space.dims, v):
        x = min(max(float(x), d.lower), d.upper)
        if d.kind == INTEGER:
            out[d.name] = min(max(round_half_away(x), math.ceil(d.lower)), math.floor(d.upper))
        elif d.kind == CATEGORICAL:
            k = len(d.categories)
            idx = min(int((x - d.lower) / (d.upper - d.lower) * k), k - 1)
            out[d.name] = d.categories[idx]
        else:
            out[d.name] = x
    return out


def xgb_space() -> ParamSpace:
    """The nine boosting dimensions with their tuning bounds."""
    return ParamSpace(
        (
            Dim("N_est", INTEGER, 1, 150),
            Dim("Max_d", INTEGER, 6, 150),
            Dim("B", CATEGORICAL, 0, 1, ("gbtree", "dart")),
            Dim("eta", CONTINUOUS, 0, 1),
            Dim("gamma", CONTINUOUS, 0, 1),
            Dim("Min_cw", CONTINUOUS, 1, 10),
            Dim("sub_s", CONTINUOUS, 0, 1),
            Dim("lambda", CONTINUOUS, 0, 1),
            Dim("alpha", CONTINUOUS, 0, 1),
        )
    )


def bagging_et_space() -> ParamSpace:
    """Bagged Extra Trees: member count, feature and sample rates, trees per member."""
    return ParamSpace(
        (
            Dim("M", INTEGER, 10, 90),
            Dim("max_features", CONTINUOUS, 0.1, 1.0),
            Dim("max_samples", CONTINUOUS, 0.1, 1.0),
            Dim("et_n_estimators", INTEGER, 10, 150),
        )
    )


# --------------------------------------------------------------------------
# configuration and results


_DEFAULT_PARAMS = {
    "de": {"F": 0.35, "CR": 0.7},
    "ga": {"alpha": None, "beta": 6.0, "p_mutation": None, "p_crossover": 0.9, "p_up": 0.5},
    "pso": {"inertia": 0.72, "c1": 1.49, "c2": 1.49, "v_clamp": 0.2},
    "opo_ea": {"sigma_frac": 0.2},
    "nelder_mead": {"tol": 1e-8, "step": 0.05},
}


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str
    pop_size: int = 25
    budget: int = 1000
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        unknown = set(self.params) - set(_DEFAULT_PARAMS[self.algorithm])
        if unknown:
            raise ValueError(f"unknown {self.algorithm} parameter(s): {sorted(unknown)}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.algorithm in ("de", "ga", "pso"):
            minimum = 4 if self.algorithm == "de" else 2
            if self.pop_size < minimum:
                raise ValueError(f"{self.algorithm} needs a population of at least {minimum}")
            if self.budget < self.pop_size:
                raise ValueError("budget exhausted before one generation (budget < pop_size)")
        object.__setattr__(self, "params", {**_DEFAULT_PARAMS[self.algorithm], **self.params})

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "pop_size": self.pop_size,
            "budget": self.budget,
            "params": dict(self.params),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TraceRow:
    generation: int
    evaluations: int
    best_fitness: float
    mean_fitness: float


@dataclass
class OptResult:
    best: CandidateVector
    trace: list[TraceRow]
    evaluations: int
    algorithm: str = ""

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "evaluations", "best_fitness", "mean_fitness"])
        for t in self.trace:
            w.writerow([t.generation, t.evaluations, repr(t.best_fitness), repr(t.mean_fitness)])
        return buf.getvalue()


def _clean(f) -> float:
    f = float(f)
    return NEG_INF if math.isnan(f) else f


class Evaluator:
    """Counts fitness calls and truncates batches at the budget.

    ``map_fn`` may run the calls of one batch concurrently; results are
    collected in submission order, so the outcome does not depend on it.
    """

    def __init__(self, fitness: Callable, budget: int, map_fn: Callable = map):
        self.fitness = fitness
        self.budget = int(budget)
        self.used = 0
        self.map_fn = map_fn

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        batch = np.atleast_2d(batch)
        take = min(len(batch), self.remaining)
        if take <= 0:
            return np.empty(0)
        self.used += take
        return np.array([_clean(f) for f in self.map_fn(self.fitness, list(batch[:take]))], dtype=np.float64)


def _finite_mean(f: np.ndarray) -> float:
    f = f[np.isfinite(f)]
    return float(f.mean()) if f.size else NEG_INF


# --------------------------------------------------------------------------
# DE/rand/1/bin


def de_mutant(X: np.ndarray, r1: int, r2: int, r3: int, F: float) -> np.ndarray:
    return X[r1] + F * (X[r2] - X[r3])


def binomial_crossover(target, mutant, CR: float, rng, forced: int | None = None) -> np.ndarray:
    d = len(target)
    forced = int(rng.integers(d)) if forced is None else forced
    take = rng.random(d) < CR
    take[forced] = True
    return np.where(take, mutant, target)


def de_step(X, fx, lower, upper, F, CR, rng, evaluate):
    """One synchronous generation; returns the new (population, fitness)."""
    N, d = X.shape
    if N < 4:
        raise ValueError("DE needs at least 4 members")
    trials = np.empty_like(X)
    for i in range(N):
        others = np.delete(np.arange(N), i)
        r1, r2, r3 = rng.choice(others, 3, replace=False)
        V = de_mutant(X, r1, r2, r3, F)
        trials[i] = np.clip(binomial_crossover(X[i], V, CR, rng), lower, upper)
    ft = evaluate(trials)
    X, fx = X.copy(), fx.copy()
    for i in range(len(ft)):
        if ft[i] >= fx[i]:
            X[i], fx[i] = trials[i], ft[i]
    return X, fx


# --------------------------------------------------------------------------
# GA with geometric crossover and non-uniform mutation

_SHIFT_EPS = 1e-9


def geometric_crossover(a, b, alpha, lower) -> tuple[np.ndarray, np.ndarray]:
    """Children a^alpha * b^(1-alpha) and b^alpha * a^(1-alpha).

    Dims whose lower bound is <= 0 are crossed in the shifted space
    v - lower + 1e-9 and mapped back.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lower = np.broadcast_to(np.asarray(lower, dtype=np.float64), a.shape)
    shift = np.where(lower <= 0, lower - _SHIFT_EPS, 0.0)
    sa, sb = a - shift, b - shift
    c1 = np.exp(alpha * np.log(sa) + (1 - alpha) * np.log(sb)) + shift
    c2 = np.exp(alpha * np.log(sb) + (1 - alpha) * np.log(sa)) + shift
    # exp/log rounding must not step outside the parents' interval
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return np.clip(c1, lo, hi), np.clip(c2, lo, hi)


def nonuniform_delta(theta, iteration, iter_max, beta=6.0):
    return (theta * (1.0 - iteration / iter_max)) ** beta


def nonuniform_mutation(a, lower, upper, theta, iteration, iter_max, up, beta=6.0):
    """Move towards the upper bound if ``up`` else towards the lower bound."""
    step = nonuniform_delta(theta, iteration, iter_max, beta)
    return np.where(up, a + (upper - a) * step, a - (a - lower) * step)


def _tournament(fx, rng) -> int:
    i, j = rng.integers(len(fx), size=2)
    return int(i if fx[i] >= fx[j] else j)


def ga_step(X, fx, lower, upper, iteration, iter_max, rng, evaluate, params=None):
    """One generation: best member carried over, N-1 offspring from size-2
    tournaments, geometric crossover and non-uniform mutation."""
    p = {**_DEFAULT_PARAMS["ga"], **(params or {})}
    N, d = X.shape
    if N < 2:
        raise ValueError("GA needs at least 2 members")
    p_mut = 1.0 / d if p["p_mutation"] is None else p["p_mutation"]
    elite = int(np.argmax(fx))
    children = []
    while len(children) < N - 1:
        A, B = X[_tournament(fx, rng)], X[_tournament(fx, rng)]
        if rng.random() < p["p_crossover"]:
            alpha = rng.random() if p["alpha"] is None else p["alpha"]
            c1, c2 = geometric_crossover(A, B, alpha, lower)
        else:
            c1, c2 = A.copy(), B.copy()
        for c in (c1, c2):
            mask = rng.random(d) < p_mut
            theta = rng.random(d)
            up = rng.random(d) <= p["p_up"]
            c = np.where(mask, nonuniform_mutation(c, lower, upper, theta, iteration, iter_max, up, p["beta"]), c)
            children.append(np.clip(c, lower, upper))
    children = np.array(children[: N - 1])
    fc = evaluate(children)
    k = len(fc)
    # a budget-truncated generation keeps the best survivors to fill up
    fill = [i for i in np.argsort(-fx, kind="stable") if i != elite][: N - 1 - k]
    newX = np.vstack([X[elite : elite + 1], children[:k], X[fill]])
    newf = np.concatenate([[fx[elite]], fc, fx[fill]])
    return newX, newf


# --------------------------------------------------------------------------
# 1+1 EA


def opo_ea_step(x, fx, lower, upper, sigma_frac, rng, evaluate):
    """Gaussian offspring with std sigma_frac*(upper-lower); kept if not worse."""
    sigma = sigma_frac * (np.asarray(upper) - np.asarray(lower))
    y = np.clip(x + sigma * rng.standard_normal(len(x)), lower, upper)
    fy = evaluate(y[None, :])
    if len(fy) and fy[0] >= fx:
        return y, float(fy[0])
    return x, fx


# --------------------------------------------------------------------------
# PSO (global best)


@dataclass
class Swarm:
    X: np.ndarray
    V: np.ndarray
    fx: np.ndarray
    pbest: np.ndarray
    pbest_f: np.ndarray

    @classmethod
    def start(cls, X, fx):
        return cls(X.copy(), np.zeros_like(X), fx.copy(), X.copy(), fx.copy())


def pso_step(swarm: Swarm, lower, upper, inertia, c1, c2, rng, evaluate, v_clamp=0.2) -> Swarm:
    N, d = swarm.X.shape
    g = swarm.pbest[int(np.argmax(swarm.pbest_f))]
    r1, r2 = rng.random((N, d)), rng.random((N, d))
    vmax = v_clamp * (np.asarray(upper) - np.asarray(lower))
    V = inertia * swarm.V + c1 * r1 * (swarm.pbest - swarm.X) + c2 * r2 * (g - swarm.X)
    V = np.clip(V, -vmax, vmax)
    X = np.clip(swarm.X + V, lower, upper)
    f = evaluate(X)
    k = len(f)
    out = Swarm(swarm.X.copy(), swarm.V.copy(), swarm.fx.copy(), swarm.pbest.copy(), swarm.pbest_f.copy())
    out.X[:k], out.V[:k], out.fx[:k] = X[:k], V[:k], f
    better = np.flatnonzero(f > out.pbest_f[:k])
    out.pbest[better], out.pbest_f[better] = X[better], f[better]
    return out


# --------------------------------------------------------------------------
# Nelder-Mead


def nelder_mead(
    fitness: Callable,
    start,
    lower=None,
    upper=None,
    budget: int = 1000,
    tol: float = 1e-8,
    step: float = 0.05,
    map_fn: Callable = map,
    evaluate: Evaluator | None = None,
) -> OptResult:
    """Maximize ``fitness`` with the reflection/expansion/contraction/shrink
    simplex (1, 2, 0.5, 0.5). Points are projected onto the box.

    A simplex has converged when every vertex is within ``tol`` of its best
    vertex. Projection can flatten the simplex onto a face of the box, so a
    converged simplex is rebuilt around its best vertex; the search stops
    when such a restart brings no improvement or the budget is spent.
    ``step`` is the initial edge as a fraction of the box width (or of
    max(|x0|, 1) when unbounded).
    """
    x0 = np.asarray(start, dtype=np.float64).ravel()
    d = x0.size
    if d < 1:
        raise ValueError("dimension must be >= 1")
    lo = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
    hi = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
    ev = evaluate or Evaluator(fitness, budget, map_fn)

    def proj(x):
        return np.clip(x, lo, hi)

    width = np.where(np.isfinite(hi - lo), hi - lo, np.maximum(np.abs(x0), 1.0))

    def around(x0):
        simplex = [x0]
        for i in range(d):
            x = x0.copy()
            x[i] += step * width[i]
            if proj(x)[i] == x0[i]:
                x[i] = x0[i] - step * width[i]
            simplex.append(proj(x))
        return np.array(simplex)

    # minimize g = -fitness
    x0 = proj(x0)
    S = around(x0)
    gv = -ev(S)
    S = S[: len(gv)]
    trace = []

    def record(it):
        b = int(np.argmin(gv))
        trace.append(TraceRow(it, ev.used, float(-gv[b]), _finite_mean(-gv)))

    def one(x):
        r = ev(x[None, :])
        return None if len(r) == 0 else -r[0]

    record(0)
    it = 0
    last_restart = np.inf
    while len(S) == d + 1 and ev.remaining > 0:
        order = np.argsort(gv, kind="stable")
        S, gv = S[order], gv[order]
        if np.max(np.linalg.norm(S[1:] - S[0], axis=1)) < tol:
            if not gv[0] < last_restart:
                break
            last_restart = gv[0]
            fresh = around(S[0])[1:]
            gs = -ev(fresh)
            k = len(gs)
            S[1 : 1 + k], gv[1 : 1 + k] = fresh[:k], gs
            if k < d:
                break
            continue
        it += 1
        xbar = S[:-1].mean(axis=0)
        xr = proj(xbar + (xbar - S[-1]))
        gr = one(xr)
        if gr is None:
            break
        if gv[0] <= gr < gv[-2]:
            S[-1], gv[-1] = xr, gr
        elif gr < gv[0]:
            xe = proj(xbar + 2.0 * (xr - xbar))
            ge = one(xe)
            if ge is not None and ge < gr:
                S[-1], gv[-1] = xe, ge
            else:
                S[-1], gv[-1] = xr, gr
        else:
            if gr < gv[-1]:
                xc = proj(xbar + 0.5 * (xr - xbar))
                gc = one(xc)
                ok = gc is not None and gc <= gr
            else:
                xc = proj(xbar + 0.5 * (S[-1] - xbar))
                gc = one(xc)
                ok = gc is not None and gc < gv[-1]
            if ok:
                S[-1], gv[-1] = xc, gc
            elif gc is None:
                break
            else:
                shrunk = S[0] + 0.5 * (S[1:] - S[0])
                gs = -ev(shrunk)
                k = len(gs)
                S[1 : 1 + k], gv[1 : 1 + k] = shrunk[:k], gs
                if k < d:
                    break
        record(it)
    b = int(np.argmin(gv))
    return OptResult(CandidateVector(S[b].copy(), float(-gv[b])), trace, ev.used, "nelder_mead")


# --------------------------------------------------------------------------
# driver


def optimize(config: OptimizerConfig, space: ParamSpace, fitness: Callable, map_fn: Callable = map) -> OptResult:
    """Run ``config.algorithm`` on raw vectors of ``space`` until the budget is spent.

    ``fitness`` receives a raw in-bounds vector and returns a score to
    maximize (NaN counts as -inf).
    """
    lower, upper = space.lower, space.upper
    d = len(space)
    rng = np.random.default_rng(config.seed)
    ev = Evaluator(fitness, config.budget, map_fn)
    p = config.params
    alg = config.algorithm

    if alg == "nelder_mead":
        start = lower + rng.random(d) * (upper - lower)
        res = nelder_mead(fitness, start, lower, upper, tol=p["tol"], step=p["step"], evaluate=ev)
        return res

    if alg == "opo_ea":
        x = lower + rng.random(d) * (upper - lower)
        fx = float(ev(x[None, :])[0])
        best_x, best_f = x, fx
        trace = [TraceRow(0, ev.used, fx, fx)]
        gen = 0
        while ev.remaining > 0:
            gen += 1
            x, fx = opo_ea_step(x, fx, lower, upper, p["sigma_frac"], rng, ev)
            if fx > best_f:
                best_x, best_f = x, fx
            trace.append(TraceRow(gen, ev.used, best_f, fx))
        return OptResult(CandidateVector(best_x.copy(), best_f), trace, ev.used, alg)

    N = config.pop_size
    X = lower + rng.random((N, d)) * (upper - lower)
    fx = ev(X)
    best_i = int(np.argmax(fx))
    best_x, best_f = X[best_i].copy(), float(fx[best_i])
    trace = [TraceRow(0, ev.used, best_f, _finite_mean(fx))]
    per_gen = N - 1 if alg == "ga" else N
    iter_max = max(1, math.ceil((config.budget - N) / per_gen))
    swarm = Swarm.start(X, fx) if alg == "pso" else None
    gen = 0
    while ev.remaining > 0:
        gen += 1
        if alg == "de":
            X, fx = de_step(X, fx, lower, upper, p["F"], p["CR"], rng, ev)
        elif alg == "ga":
            X, fx = ga_step(X, fx, lower, upper, gen, iter_max, rng, ev, p)
        else:
            swarm = pso_step(swarm, lower, upper, p["inertia"], p["c1"], p["c2"], rng, ev, p["v_clamp"])
            X, fx = swarm.X, swarm.fx
        i = int(np.argmax(fx))
        if fx[i] > best_f:
            best_x, best_f = X[i].copy(), float(fx[i])
        trace.append(TraceRow(gen, ev.used, best_f, _finite_mean(fx)))
    return OptResult(CandidateVector(best_x, best_f), trace, ev.used, alg)


# --------------------------------------------------------------------------
# hyper-parameter tuning


def _decoded_key(hp: dict) -> str:
    return hashlib.sha256(json.dumps(hp, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class TuneResult:
    best_params: dict
    best_spec: Any
    result: OptResult
    fold_reports: list
    evaluations: int
    failures: int


def tune(
    model_builder: Callable[[dict], Any],
    space: ParamSpace,
    X: np.ndarray,
    y: np.ndarray,
    splits: Sequence[tuple[np.ndarray, np.ndarray]],
    config: OptimizerConfig,
    fit_fn: Callable | None = None,
    map_fn: Callable = map,
) -> TuneResult:
    """Maximize mean validation R-value over ``splits`` (train rows, validation rows).

    ``model_builder`` turns decoded hyper-parameters into a model spec and
    ``fit_fn(spec, X, y)`` fits it (defaults to ``ensemble.fit_model``). A
    candidate whose build, fit or scoring fails, or whose R is undefined,
    scores -inf. Scores are cached by the decoded parameters.
    """
    from .ensemble import fit_model
    from .metrics import evaluate

    fit_fn = fit_fn or fit_model
    cache: dict[str, tuple[float, list]] = {}
    failures = [0]

    def score(hp: dict):
        key = _decoded_key(hp)
        if key in cache:
            return cache[key]
        reports = []
        try:
            spec = model_builder(hp)
            for tr, va in splits:
                model = fit_fn(spec, X[tr], y[tr])
                reports.append(evaluate(y[va], model.predict(X[va])))
            f = float(np.mean([r.r_value for r in reports]))
            if math.isnan(f):
                f = NEG_INF
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            f, reports = NEG_INF, []
        if f == NEG_INF:
            failures[0] += 1
        cache[key] = (f, reports)
        return f, reports

    def fitness(v):
        return score(decode(space, v))[0]

    res = optimize(config, space, fitness, map_fn)
    best_hp = decode(space, res.best.values)
    f, reports = score(best_hp)
    spec = model_builder(best_hp) if f > NEG_INF else None
    return TuneResult(best_hp, spec, res, reports, res.evaluations, failures[0])
