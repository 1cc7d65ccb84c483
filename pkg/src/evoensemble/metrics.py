"""Regression metrics and their aggregation over repeated runs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

# fixed output order; labels match the summary table rows
METRIC_FIELDS = ("mse", "rmse", "mae", "msle", "smape", "evs", "r_value")
METRIC_LABELS = {
    "mse": "MSE",
    "rmse": "RMSE",
    "mae": "MAE",
    "msle": "MSLE",
    "smape": "SMAPE",
    "evs": "EVS",
    "r_value": "R-value",
}
SUMMARY_FIELDS = ("min", "max", "mean", "median", "std")


@dataclass(frozen=True)
class MetricReport:
    mse: float
    rmse: float
    mae: float
    msle: float
    smape: float
    evs: float
    r_value: float
    n_samples: int
    msle_clamped: int = 0

    @property
    def r_defined(self) -> bool:
        return not math.isnan(self.r_value)

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in METRIC_FIELDS)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def evaluate(y_true, y_pred) -> MetricReport:
    """All seven metrics. ``r_value`` is NaN when either input is constant.

    MSLE clamps negative entries at 0 before ``log1p``; the number of clamped
    entries is reported in ``msle_clamped``. A SMAPE term with 0/0 counts as 0.
    """
    t = np.asarray(y_true, dtype=np.float64).ravel()
    e = np.asarray(y_pred, dtype=np.float64).ravel()
    if t.shape != e.shape:
        raise ValueError(f"length mismatch: {t.size} targets vs {e.size} predictions")
    if t.size == 0:
        raise ValueError("cannot evaluate empty inputs")
    err = t - e
    mse = float(np.mean(err**2))
    mae = float(np.mean(np.abs(err)))

    clamped = int((t < 0).sum() + (e < 0).sum())
    msle = float(np.mean((np.log1p(np.maximum(t, 0)) - np.log1p(np.maximum(e, 0))) ** 2))

    den = 0.5 * (np.abs(t) + np.abs(e))
    num = np.abs(err)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    smape = float(100.0 * terms.mean())

    var_t = np.var(t)
    evs = float(1.0 - np.var(err) / var_t) if var_t > 0 else (1.0 if np.var(err) == 0 else -math.inf)

    tc = t - t.mean()
    ec = e - e.mean()
    st, se = np.abs(tc).max(), np.abs(ec).max()
    if st == 0 or se == 0:
        r = math.nan
    else:
        # scaled to avoid overflow; sqrt(a*a) == a keeps identical inputs at exactly 1
        tc, ec = tc / st, ec / se
        r = float(np.clip((tc @ ec) / np.sqrt((tc @ tc) * (ec @ ec)), -1.0, 1.0))
    return MetricReport(mse, math.sqrt(mse), mae, msle, smape, evs, r, int(t.size), clamped)


@dataclass(frozen=True)
class RunSummary:
    """Five-number summary per metric, keyed by metric field name."""

    stats: dict
    n_runs: int

    def get(self, metric: str, stat: str) -> float:
        return self.stats[metric][stat]

    def to_dict(self) -> dict:
        return {"n_runs": self.n_runs, "stats": {m: dict(self.stats[m]) for m in METRIC_FIELDS}}

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        return cls({m: dict(d["stats"][m]) for m in METRIC_FIELDS}, int(d["n_runs"]))


def summarize(reports: Sequence[MetricReport]) -> RunSummary:
    if len(reports) == 0:
        raise ValueError("cannot summarize an empty report list")
    stats = {}
    for m in METRIC_FIELDS:
        # sorting makes the summary independent of report order
        v = np.sort(np.array([getattr(r, m) for r in reports], dtype=np.float64))
        stats[m] = {
            "min": float(v.min()),
            "max": float(v.max()),
            "mean": float(v.mean()),
            "median": float(np.median(v)),
            "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        }
    return RunSummary(stats, len(reports))


def _fmt(x: float) -> str:
    return repr(float(x))


def reports_to_csv(reports: Sequence[MetricReport], keys: Sequence[Sequence] | None = None, key_names=()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*key_names, *METRIC_FIELDS, "n_samples", "msle_clamped"])
    for i, r in enumerate(reports):
        prefix = list(keys[i]) if keys is not None else []
        w.writerow([*prefix, *(_fmt(x) for x in r.values()), r.n_samples, r.msle_clamped])
    return buf.getvalue()


def summaries_to_csv(summaries: dict[str, RunSummary | None]) -> str:
    """Long table: one row per (model, statistic), metric columns in fixed order.
    A model whose summary is None is written with a FAILED marker."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "statistic", *(METRIC_LABELS[m] for m in METRIC_FIELDS)])
    for name, s in summaries.items():
        if s is None:
            w.writerow([name, "FAILED", *([""] * len(METRIC_FIELDS))])
            continue
        for stat in SUMMARY_FIELDS:
            w.writerow([name, stat, *(_fmt(s.get(m, stat)) for m in METRIC_FIELDS)])
    return buf.getvalue()


def report_to_json(report: MetricReport) -> str:
    return json.dumps(report.to_dict())


def summary_to_json(summary: RunSummary) -> str:
    return json.dumps(summary.to_dict())
