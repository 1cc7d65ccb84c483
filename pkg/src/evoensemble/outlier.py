"""Local Outlier Factor scoring with exact k-nearest-neighbour sets."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dataio import DataError, Frame

DEFAULT_K = 20
DEFAULT_THRESHOLD = 1.5

_CHUNK = 512


@dataclass(frozen=True)
class NeighborIndex:
    """Exact neighbourhoods. ``neighbors[i]`` holds every j != i whose distance
    to i is at most ``k_distance[i]``, so ties at the k-th distance are kept."""

    k: int
    points: np.ndarray
    neighbors: tuple[np.ndarray, ...]
    distances: tuple[np.ndarray, ...]
    k_distance: np.ndarray

    def distance(self, a: int, b: int) -> float:
        return float(cdist(self.points[a : a + 1], self.points[b : b + 1])[0, 0])


def build_index(points, k: int) -> NeighborIndex:
    X = np.ascontiguousarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D matrix")
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")
    if np.isnan(X).any():
        raise ValueError("points contain NaN")

    neighbors, distances = [], []
    kdist = np.empty(n)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        D = cdist(X[start:stop], X)
        rows = np.arange(stop - start)
        D[rows, rows + start] = np.inf  # a point is not its own neighbour
        kth = np.partition(D, k - 1, axis=1)[:, k - 1]
        kdist[start:stop] = kth
        for r in rows:
            ids = np.flatnonzero(D[r] <= kth[r])
            order = np.argsort(D[r, ids], kind="stable")
            neighbors.append(ids[order])
            distances.append(D[r, ids[order]])
    return NeighborIndex(k, X, tuple(neighbors), tuple(distances), kdist)


def reach_dist(index: NeighborIndex, x: int, o: int) -> float:
    """max(k-distance(o), d(x, o))."""
    return max(float(index.k_distance[o]), index.distance(x, o))


def _lrd_all(index: NeighborIndex) -> np.ndarray:
    out = np.empty(len(index.neighbors))
    for i, (ids, d) in enumerate(zip(index.neighbors, index.distances)):
        total = np.maximum(index.k_distance[ids], d).sum()
        out[i] = np.inf if total == 0.0 else len(ids) / total
    return out


def lrd(index: NeighborIndex, x: int) -> float:
    """Inverse mean reachability distance; ``inf`` when every reach distance is 0."""
    ids = index.neighbors[x]
    total = np.maximum(index.k_distance[ids], index.distances[x]).sum()
    return float("inf") if total == 0.0 else len(ids) / float(total)


def _density_ratio(num: np.ndarray, den: float) -> np.ndarray:
    if np.isinf(den):
        return np.where(np.isinf(num), 1.0, 0.0)
    return num / den


@dataclass(frozen=True)
class LofReport:
    lrd: np.ndarray
    lof: np.ndarray
    threshold: float
    outliers: np.ndarray

    def to_csv(self, row_ids: Sequence[int] | None = None) -> str:
        ids = np.arange(len(self.lof)) if row_ids is None else np.asarray(row_ids)
        flagged = np.zeros(len(self.lof), dtype=bool)
        flagged[self.outliers] = True
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row_id", "lrd", "lof", "is_outlier"])
        for rid, a, b, f in zip(ids, self.lrd, self.lof, flagged):
            w.writerow([int(rid), repr(float(a)), repr(float(b)), int(f)])
        return buf.getvalue()


def lof_scores(points, k: int = DEFAULT_K, threshold: float = np.inf) -> LofReport:
    index = build_index(points, k)
    densities = _lrd_all(index)
    lof = np.empty_like(densities)
    for i, ids in enumerate(index.neighbors):
        lof[i] = _density_ratio(densities[ids], densities[i]).mean()
    return LofReport(densities, lof, float(threshold), np.flatnonzero(lof > threshold))


def standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def filter_outliers(
    frame: Frame,
    feature_columns: Sequence[str],
    k: int = DEFAULT_K,
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[Frame, LofReport]:
    """Mask active rows whose LOF exceeds ``threshold``.

    Scores are computed on z-scored ``feature_columns`` of the active rows.
    Returns the filtered frame and the report (indexed by active-row order);
    ``len(report.outliers)`` is the removed count.
    """
    if not threshold > 1:
        raise ValueError("threshold must be > 1")
    if frame.n_active < k + 1:
        raise DataError(f"need at least k+1={k + 1} active rows, have {frame.n_active}")
    X = standardize(frame.matrix(list(feature_columns)))
    report = lof_scores(X, k, threshold)
    keep = np.ones(frame.n_rows, dtype=bool)
    keep[np.flatnonzero(frame.active_mask)[report.outliers]] = False
    return frame.with_mask(keep), report
