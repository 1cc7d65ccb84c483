"""Batch experiment runner.

    evoensemble <describe|clean|train|tune|benchmark|report> --config PATH
                [--seed N] [--jobs N] [--out DIR]

The dataset path comes from the config or, failing that, the
``EVOENSEMBLE_DATA`` environment variable.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import multiprocessing
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__, dataio, ensemble, learners, metaopt, metrics, outlier
from .ensemble import BaggingSpec, VotingSpec, spec_from_dict
from .learners import LearnerSpec

DATA_ENV = "EVOENSEMBLE_DATA"
REPORT_FORMAT = "evoensemble-benchmark/1"
MODEL_FORMAT = "evoensemble-model/1"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


# --------------------------------------------------------------------------
# presets


def _spec(family: str, **hp) -> dict:
    return {"family": family, "hyperparams": hp}


def _bag(base: dict, M: int, max_samples: float, max_features: float) -> dict:
    return {"family": "bagging", "base": base, "M": M, "max_samples": max_samples, "max_features": max_features}


XGB_DEFAULTS = _spec("gbt", N_est=100, Max_d=6, eta=0.3, gamma=0.0, Min_cw=1.0, sub_s=1.0, **{"lambda": 1.0}, alpha=0.0)
# in-house stand-in for the external light gradient boosting learner: many
# low-rate rounds on deeper, leaf-heavy trees with row subsampling
LGBM_SUBSTITUTE = _spec("gbt", N_est=300, Max_d=8, eta=0.05, Min_cw=1.0, sub_s=0.9, **{"lambda": 1.0})
RF = _bag(_spec("cart"), 30, 1.0, 1 / 3)
KNN = _spec("knn", K=5)
# tuned bagging of extra trees: ~62 members of 80 trees, 0.4 feature rate, full sample rate
BAG_ET = _bag(_spec("extratree", n_estimators=80), 62, 1.0, 0.4)

PRESETS: dict[str, dict] = {
    "paper-baselines": {
        "models": [
            {"name": "LR", "spec": _spec("linear")},
            {"name": "KNN", "spec": KNN},
            {"name": "DT", "spec": _spec("cart")},
            {"name": "ET", "spec": _spec("extratree", n_estimators=150)},
            {"name": "RF", "spec": RF},
            {"name": "XGB", "spec": XGB_DEFAULTS},
        ],
        "tuning": [
            {
                "name": "xgb-de",
                "model": "XGB",
                "space": "xgb",
                "optimizer": {"algorithm": "de", "pop_size": 25, "budget": 1000},
            }
        ],
    },
    "paper-bagging": {
        "models": [{"name": "Bag-ET", "spec": BAG_ET}],
        "tuning": [
            {
                "name": "bag-et-1p1ea",
                "model": "Bag-ET",
                "space": "bagging_et",
                "optimizer": {"algorithm": "opo_ea", "budget": 200},
            }
        ],
    },
    "paper-stacking": {
        "models": [
            {"name": "ET", "spec": _spec("extratree", n_estimators=50)},
            {"name": "GBT", "spec": LGBM_SUBSTITUTE},
            {"name": "RF", "spec": RF},
            {"name": "KNN", "spec": KNN},
            {
                "name": "Stacking",
                "spec": {
                    "family": "stacking",
                    "sub_learners": [_spec("extratree", n_estimators=50), LGBM_SUBSTITUTE, RF, KNN],
                    "meta": _spec("linear"),
                    "oof_folds": 5,
                },
            },
        ]
    },
    "paper-voting": {
        "models": [
            {
                "name": "Voting",
                "adaptive": {
                    "kind": "pruned_voting",
                    "members": [
                        {"name": "XGB", "spec": XGB_DEFAULTS},
                        {"name": "GBT", "spec": LGBM_SUBSTITUTE},
                        {"name": "ET", "spec": _spec("extratree", n_estimators=50)},
                        {"name": "RF", "spec": RF},
                        {"name": "KNN", "spec": KNN},
                        {"name": "LR", "spec": _spec("linear")},
                    ],
                },
            }
        ]
    },
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "out": "out",
    "audit": False,
    "lof": {"enabled": True, "k": 20, "threshold": 1.5, "mode": "full"},
    "folds": {"k": 10, "repeats": 10, "seed": 0},
    "features": {"include_random": False},
    "models": [],
    "tuning": [],
}

_MEMBER = {
    "type": "object",
    "required": ["name", "spec"],
    "properties": {"name": {"type": "string", "minLength": 1}, "spec": {"type": "object"}},
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": sorted(PRESETS)},
        "dataset": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "jobs": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "audit": {"type": "boolean"},
        "lof": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "k": {"type": "integer", "minimum": 1},
                "threshold": {"type": "number", "exclusiveMinimum": 1},
                "mode": {"enum": ["full", "train"]},
            },
        },
        "folds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 3},
                "repeats": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "features": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"include_random": {"type": "boolean"}},
        },
        "models": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "spec": {"type": "object"},
                    "adaptive": {
                        "type": "object",
                        "required": ["kind"],
                        "additionalProperties": False,
                        "properties": {
                            "kind": {"enum": ["pruned_voting", "forward_stacking"]},
                            "members": {"type": "array", "minItems": 1, "items": _MEMBER},
                            "meta": {"type": "object"},
                            "oof_folds": {"type": "integer", "minimum": 2},
                            "refine_budget": {"type": "integer", "minimum": 1},
                        },
                    },
                },
                "oneOf": [{"required": ["spec"]}, {"required": ["adaptive"]}],
            },
        },
        "tuning": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "model", "space", "optimizer"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "model": {"type": "string"},
                    "space": {"oneOf": [{"enum": ["xgb", "bagging_et"]}, {"type": "object"}]},
                    "optimizer": {
                        "type": "object",
                        "required": ["algorithm"],
                        "additionalProperties": False,
                        "properties": {
                            "algorithm": {"enum": list(metaopt.ALGORITHMS)},
                            "pop_size": {"type": "integer", "minimum": 1},
                            "budget": {"type": "integer", "minimum": 1},
                            "params": {"type": "object"},
                            "seed": {"type": "integer", "minimum": 0},
                        },
                    },
                    "repeats": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}


def resolve_config(raw: dict, seed: int | None = None, jobs: int | None = None, out: str | None = None) -> dict:
    """Validate ``raw``, lay it over its preset and the defaults, and apply
    command-line overrides."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise StageError("config", f"{where}: {exc.message}") from None
    cfg = copy.deepcopy(DEFAULTS)
    layers = [PRESETS[raw["preset"]]] if "preset" in raw else []
    for layer in layers + [raw]:
        for key, value in copy.deepcopy(layer).items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    if seed is not None:
        cfg["seed"] = seed
    if jobs is not None:
        cfg["jobs"] = jobs
    if out is not None:
        cfg["out"] = out

    names = [m["name"] for m in cfg["models"]]
    if len(set(names)) != len(names):
        raise StageError("config", "model names must be unique")
    for block in cfg["tuning"]:
        if block["model"] not in names:
            raise StageError("config", f"tuning block {block['name']!r} references unknown model {block['model']!r}")
    if cfg["folds"]["repeats"] > cfg["folds"]["k"]:
        raise StageError("config", "folds.repeats cannot exceed folds.k")
    for m in cfg["models"]:
        try:
            if "spec" in m:
                spec_from_dict(m["spec"])
            else:
                for member in m["adaptive"].get("members", []):
                    spec_from_dict(member["spec"])
        except (ValueError, KeyError, TypeError) as exc:
            raise StageError("config", f"model {m['name']!r}: {exc}") from None
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that can change results (not paths or worker count)."""
    body = {k: v for k, v in cfg.items() if k not in ("out", "jobs", "dataset")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dataset_path(cfg: dict) -> Path:
    path = cfg.get("dataset") or os.environ.get(DATA_ENV)
    if not path:
        raise StageError("load", f"no dataset: set 'dataset' in the config or {DATA_ENV}")
    return Path(path)


# --------------------------------------------------------------------------
# data preparation


@dataclass
class Prepared:
    frame: dataio.Frame
    features: list[str]
    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray  # original row positions of the active rows
    lof_removed: int
    dataset_sha256: str
    lof_report: outlier.LofReport | None = None


def prepare(cfg: dict) -> Prepared:
    path = dataset_path(cfg)
    try:
        frame = dataio.load_csv(path)
        digest = file_sha256(path)
    except (OSError, ValueError) as exc:
        raise StageError("load", str(exc)) from None
    try:
        frame = dataio.derive_calendar(frame)
    except ValueError as exc:
        raise StageError("calendar", str(exc)) from None
    features = frame.feature_names(include_random=cfg["features"]["include_random"])
    removed = 0
    report = None
    lof = cfg["lof"]
    if lof["enabled"] and lof["mode"] == "full":
        try:
            frame, report = outlier.filter_outliers(frame, features, lof["k"], lof["threshold"])
        except ValueError as exc:
            raise StageError("lof", str(exc)) from None
        removed = len(report.outliers)
    return Prepared(
        frame,
        features,
        frame.matrix(features),
        frame.active_values(frame.target),
        np.flatnonzero(frame.active_mask),
        removed,
        digest,
        report,
    )


# --------------------------------------------------------------------------
# per-(model, repeat) tasks

_WORK: dict[str, Any] = {}


def task_seed(seed: int, model: str, repeat: int, fold: int) -> int:
    key = f"{seed}|{model}|{repeat}|{fold}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little") & 0x7FFFFFFF


def _seeded(spec_doc: dict, seed: int):
    return ensemble.with_seed(spec_from_dict(spec_doc), seed)


def _train_filter(X: np.ndarray, train: np.ndarray, lof: dict) -> np.ndarray:
    """LOF restricted to training rows (``lof.mode == 'train'``)."""
    if not (lof["enabled"] and lof["mode"] == "train"):
        return train
    rep = outlier.lof_scores(outlier.standardize(X[train]), lof["k"], lof["threshold"])
    keep = np.ones(len(train), dtype=bool)
    keep[rep.outliers] = False
    return train[keep]


def _r_value(y, p) -> float:
    r = metrics.evaluate(y, p).r_value
    return -math.inf if math.isnan(r) else r


def _pruned_voting(entry, X, y, train, val, test, seed, repeat, fold):
    ad = entry["adaptive"]
    names = [m["name"] for m in ad["members"]]
    pv, pt = {}, {}
    for m in ad["members"]:
        model = ensemble.fit_model(_seeded(m["spec"], task_seed(seed, m["name"], repeat, fold)), X[train], y[train])
        pv[m["name"]] = model.predict(X[val])
        pt[m["name"]] = model.predict(X[test])

    def score(vs: VotingSpec) -> float:
        return _r_value(y[val], ensemble.vote_average(vs, [pv[n] for n in vs.members]))

    res = ensemble.backward_prune_voting(VotingSpec(tuple(names)), score, refine_budget=ad.get("refine_budget", 200))
    kept = list(res.spec.members)
    pred = ensemble.vote_average(res.spec, [pt[n] for n in kept])
    details = {
        "kept": kept,
        "weights": list(res.spec.weights),
        "removed": [names[i] for i in res.removed],
        "validation_r": res.refined_score,
        "solo": {n: metrics.evaluate(y[test], pt[n]).to_dict() for n in names},
    }
    return pred, details


def _forward_stacking(entry, X, y, train, val, test, seed, repeat, fold):
    ad = entry["adaptive"]
    members = {m["name"]: _seeded(m["spec"], task_seed(seed, m["name"], repeat, fold)) for m in ad["members"]}
    meta = spec_from_dict(ad.get("meta", {"family": "linear"}))
    folds = ad.get("oof_folds", 5)
    solo = {}
    for n, s in members.items():
        solo[n] = _r_value(y[val], ensemble.fit_model(s, X[train], y[train]).predict(X[val]))
    ranked = sorted(members, key=lambda n: (-solo[n], list(members).index(n)))

    def stack(names):
        return ensemble.StackingSpec(tuple(members[n] for n in names), meta, folds, seed)

    def score(names) -> float:
        return _r_value(y[val], ensemble.fit_model(stack(names), X[train], y[train]).predict(X[val]))

    sel = ensemble.greedy_forward_select(ranked, score)
    model = ensemble.fit_model(stack(sel.selected), X[train], y[train])
    details = {"ranked": ranked, "selected": sel.selected, "scores": sel.scores, "solo_validation_r": solo}
    return model.predict(X[test]), details


def run_task(index: int, repeat: int) -> dict:
    """Fit model ``index`` for one repeat and score it on the test fold."""
    cfg, X, y, plan = _WORK["cfg"], _WORK["X"], _WORK["y"], _WORK["plan"]
    entry = cfg["models"][index]
    train, val, test = plan.split(repeat)
    fold = plan.repeats[repeat][0]
    seed = task_seed(cfg["seed"], entry["name"], repeat, fold)
    out = {"model": index, "repeat": repeat, "test_fold": int(fold)}
    try:
        train = _train_filter(X, train, cfg["lof"])
        if cfg["audit"]:
            overlap = np.intersect1d(train, test).size + np.intersect1d(val, test).size
            if overlap:
                raise AssertionError(f"{overlap} test rows leaked into fitting")
            out["audit"] = {"train_rows": int(train.size), "val_rows": int(val.size), "test_rows": int(test.size)}
        details = {}
        if "spec" in entry:
            model = ensemble.fit_model(_seeded(entry["spec"], seed), X[train], y[train])
            if cfg["audit"] and isinstance(model, ensemble.StackingModel):
                for rec in model.audit:
                    if np.intersect1d(rec.train_rows, rec.predicted_rows).size:
                        raise AssertionError("out-of-fold prediction saw its own row")
                out["audit"]["oof_fits"] = len(model.audit)
            pred = model.predict(X[test])
        elif entry["adaptive"]["kind"] == "pruned_voting":
            pred, details = _pruned_voting(entry, X, y, train, val, test, cfg["seed"], repeat, fold)
        else:
            pred, details = _forward_stacking(entry, X, y, train, val, test, cfg["seed"], repeat, fold)
        out["metrics"] = metrics.evaluate(y[test], pred).to_dict()
        out["details"] = details
    except Exception as exc:  # a failed model is reported, not fatal
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def run(cfg: dict, prepared: Prepared | None = None) -> dict:
    """Full benchmark; returns the report document."""
    started = time.time()
    prepared = prepared or prepare(cfg)
    try:
        plan = dataio.make_folds(len(prepared.y), cfg["folds"]["k"], cfg["folds"]["seed"])
    except ValueError as exc:
        raise StageError("folds", str(exc)) from None
    _WORK.update(cfg=cfg, X=prepared.X, y=prepared.y, plan=plan)
    tasks = [(i, r) for i in range(len(cfg["models"])) for r in range(cfg["folds"]["repeats"])]
    if cfg["jobs"] > 1 and len(tasks) > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(cfg["jobs"], mp_context=ctx) as pool:
            results = list(pool.map(run_task, *zip(*tasks)))
    else:
        results = [run_task(i, r) for i, r in tasks]

    models = []
    for i, entry in enumerate(cfg["models"]):
        rows = sorted((t for t in results if t["model"] == i), key=lambda t: t["repeat"])
        errors = [t["error"] for t in rows if "error" in t]
        doc = {"name": entry["name"], "status": "failed" if errors else "ok", "folds": []}
        if errors:
            doc["error"] = errors[0]
        for t in rows:
            fold_doc = {k: t[k] for k in ("repeat", "test_fold", "metrics", "details", "audit", "error") if k in t}
            doc["folds"].append(fold_doc)
        if not errors:
            doc["summary"] = metrics.summarize([metrics.MetricReport.from_dict(t["metrics"]) for t in rows]).to_dict()
        models.append(doc)

    return {
        "format": REPORT_FORMAT,
        "provenance": {
            "config_sha256": config_hash(cfg),
            "dataset_sha256": prepared.dataset_sha256,
            "seed": cfg["seed"],
            "jobs": cfg["jobs"],
            "package_version": __version__,
            "wall_clock_seconds": round(time.time() - started, 3),
        },
        "config": cfg,
        "dataset": {
            "rows": prepared.frame.n_rows,
            "active_rows": prepared.frame.n_active,
            "lof_removed": prepared.lof_removed,
            "features": prepared.features,
        },
        "models": models,
    }


def summary_csv(report: dict) -> str:
    summaries = {}
    for m in report["models"]:
        summaries[m["name"]] = metrics.RunSummary.from_dict(m["summary"]) if m["status"] == "ok" else None
    return metrics.summaries_to_csv(summaries)


def folds_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "repeat", "test_fold", *metrics.METRIC_FIELDS, "n_samples", "msle_clamped", "error"])
    for m in report["models"]:
        for f in m["folds"]:
            if "metrics" in f:
                r = f["metrics"]
                vals = [repr(float(r[k])) for k in metrics.METRIC_FIELDS] + [r["n_samples"], r["msle_clamped"], ""]
            else:
                vals = [""] * (len(metrics.METRIC_FIELDS) + 2) + [f.get("error", "")]
            w.writerow([m["name"], f["repeat"], f["test_fold"], *vals])
    return buf.getvalue()


def write_report(report: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(report))
    (out / "folds.csv").write_text(folds_csv(report))
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))


def render_text(report: dict) -> str:
    """Aligned mean/std table of every metric per model."""
    head = ["model", *(metrics.METRIC_LABELS[m] for m in metrics.METRIC_FIELDS)]
    rows = []
    for m in report["models"]:
        if m["status"] != "ok":
            rows.append([m["name"], f"FAILED ({m.get('error', '')})"])
            continue
        s = m["summary"]["stats"]
        rows.append([m["name"], *(f"{s[k]['mean']:.4f}±{s[k]['std']:.4f}" for k in metrics.METRIC_FIELDS)])
    widths = [max(len(r[i]) for r in [head] + [r for r in rows if len(r) > i]) for i in range(len(head))]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(head))]
    for r in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# tuning


def space_for(block: dict) -> metaopt.ParamSpace:
    if block["space"] == "xgb":
        return metaopt.xgb_space()
    if block["space"] == "bagging_et":
        return metaopt.bagging_et_space()
    return metaopt.ParamSpace.from_dict(block["space"])


def builder_for(block: dict, target: dict, seed: int):
    """Decoded hyper-parameters -> model spec, keeping the target model's other settings."""
    base = spec_from_dict(target["spec"])
    if block["space"] == "bagging_et":

        def build(hp):
            inner = base.base if isinstance(base, BaggingSpec) else LearnerSpec("extratree")
            et = LearnerSpec("extratree", {**inner.hyperparams, "n_estimators": hp["et_n_estimators"]}, inner.seed)
            return BaggingSpec(et, hp["M"], hp["max_samples"], hp["max_features"], seed)

        return build

    if not isinstance(base, LearnerSpec):
        raise StageError("tune", f"space {block['space']!r} needs a base-learner target")

    def build(hp):
        return LearnerSpec(base.family, {**base.hyperparams, **hp}, seed)

    return build


def tune_block(cfg: dict, block: dict, prepared: Prepared) -> metaopt.TuneResult:
    plan = dataio.make_folds(len(prepared.y), cfg["folds"]["k"], cfg["folds"]["seed"])
    splits = [plan.split(r)[:2] for r in range(block.get("repeats", 1))]
    target = next(m for m in cfg["models"] if m["name"] == block["model"])
    if "spec" not in target:
        raise StageError("tune", f"model {target['name']!r} is adaptive and cannot be tuned")
    opt = dict(block["optimizer"])
    opt.setdefault("seed", cfg["seed"])
    config = metaopt.OptimizerConfig(**opt)
    seed = task_seed(cfg["seed"], target["name"], 0, 0)
    return metaopt.tune(builder_for(block, target, seed), space_for(block), prepared.X, prepared.y, splits, config)


# --------------------------------------------------------------------------
# commands


def _load_config(args) -> dict:
    if not args.config:
        raise StageError("config", "missing --config")
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("config", str(exc)) from None
    return resolve_config(raw, args.seed, args.jobs, args.out)


def cmd_describe(cfg, args) -> int:
    try:
        frame = dataio.load_csv(dataset_path(cfg))
    except (OSError, ValueError) as exc:
        raise StageError("load", str(exc)) from None
    cols = [c.name for c in frame.schema if c.kind != dataio.TIMESTAMP]
    text = dataio.stats_to_csv({c: dataio.describe(frame, c) for c in cols})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "describe.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_clean(cfg, args) -> int:
    cfg = copy.deepcopy(cfg)
    cfg["lof"].update(enabled=True, mode="full")
    prepared = prepare(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_csv(prepared.frame, out / "cleaned.csv", active_only=True)
    (out / "lof.csv").write_text(prepared.lof_report.to_csv())
    print(f"removed {prepared.lof_removed} of {prepared.frame.n_rows} rows (k={cfg['lof']['k']}, threshold={cfg['lof']['threshold']})")
    return 0


def _predictions_digest(pred: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(pred, dtype="<f8").tobytes()).hexdigest()


def cmd_train(cfg, args) -> int:
    names = [m["name"] for m in cfg["models"]]
    name = args.model or (names[0] if names else None)
    entry = next((m for m in cfg["models"] if m["name"] == name), None)
    if entry is None:
        raise StageError("train", f"unknown model {name!r}; roster: {names}")
    if "spec" not in entry:
        raise StageError("train", f"model {name!r} is adaptive; only fixed specs can be trained")
    prepared = prepare(cfg)
    seed = task_seed(cfg["seed"], name, 0, 0)
    try:
        model = ensemble.fit_model(_seeded(entry["spec"], seed), prepared.X, prepared.y)
    except Exception as exc:
        raise StageError(f"fit:{name}", str(exc)) from None
    pred = model.predict(prepared.X)
    doc = {
        "format": MODEL_FORMAT,
        "model": model.to_dict(),
        "features": prepared.features,
        "provenance": {
            "config_sha256": config_hash(cfg),
            "dataset_sha256": prepared.dataset_sha256,
            "seed": cfg["seed"],
        },
        "predictions_sha256": _predictions_digest(pred),
        "n_rows": int(len(pred)),
    }
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.model.json"
    path.write_text(json.dumps(doc))
    print(f"wrote {path}")
    return 0


def cmd_tune(cfg, args) -> int:
    blocks = {b["name"]: b for b in cfg["tuning"]}
    if not blocks:
        raise StageError("tune", "config has no tuning blocks")
    name = args.block or next(iter(blocks))
    if name not in blocks:
        raise StageError("tune", f"unknown tuning block {name!r}; blocks: {list(blocks)}")
    prepared = prepare(cfg)
    res = tune_block(cfg, blocks[name], prepared)
    out = Path(cfg["out"]) / name
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(res.result.trace_csv())
    best = {
        "format": MODEL_FORMAT,
        "spec": res.best_spec.to_dict() if res.best_spec is not None else None,
        "params": res.best_params,
        "fitness": res.result.best.fitness,
        "evaluations": res.evaluations,
        "failed_candidates": res.failures,
        "fold_reports": [r.to_dict() for r in res.fold_reports],
        "provenance": {"config_sha256": config_hash(cfg), "dataset_sha256": prepared.dataset_sha256},
    }
    (out / "best_spec.json").write_text(json.dumps(best, indent=1, default=str))
    print(f"{name}: best mean validation R {res.result.best.fitness:.6f} after {res.evaluations} evaluations")
    print(json.dumps(res.best_params, default=str))
    return 0


def cmd_benchmark(cfg, args) -> int:
    report = run(cfg)
    write_report(report, Path(cfg["out"]))
    sys.stdout.write(render_text(report))
    return 0 if all(m["status"] == "ok" for m in report["models"]) else 1


def _check_provenance(cfg: dict, prov: dict, what: str) -> None:
    if prov.get("config_sha256") != config_hash(cfg):
        raise StageError("report", f"{what} was produced by a different config (hash mismatch); refusing")
    path = cfg.get("dataset") or os.environ.get(DATA_ENV)
    if path and Path(path).exists() and prov.get("dataset_sha256") != file_sha256(path):
        raise StageError("report", f"{what} was produced from a different dataset (checksum mismatch); refusing")


def cmd_report(cfg, args) -> int:
    if args.model_file:
        try:
            doc = json.loads(Path(args.model_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError("report", str(exc)) from None
        _check_provenance(cfg, doc["provenance"], "model")
        model = learners.model_from_dict(doc["model"])
        prepared = prepare(cfg)
        pred = model.predict(prepared.X)
        if _predictions_digest(pred) != doc["predictions_sha256"]:
            raise StageError("report", "reloaded model predictions differ from the saved ones")
        print(f"predictions identical after reload ({len(pred)} rows)")
        return 0
    path = Path(args.report) if args.report else Path(cfg["out"]) / "report.json"
    try:
        report = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("report", str(exc)) from None
    _check_provenance(cfg, report["provenance"], "report")
    sys.stdout.write(summary_csv(report) if args.format == "csv" else render_text(report))
    return 0


COMMANDS = {
    "describe": cmd_describe,
    "clean": cmd_clean,
    "train": cmd_train,
    "tune": cmd_tune,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evoensemble", description="Ensemble benchmark runner")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int)
        s.add_argument("--out")
        if name == "train":
            s.add_argument("--model", help="roster model name (default: first)")
        if name == "tune":
            s.add_argument("--block", help="tuning block name (default: first)")
        if name == "report":
            s.add_argument("--report", help="report.json path (default: <out>/report.json)")
            s.add_argument("--model", dest="model_file", help="serialized model to verify")
            s.add_argument("--format", choices=["text", "csv"], default="text")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg, args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
