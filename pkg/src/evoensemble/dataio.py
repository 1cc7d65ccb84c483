"""Loading, validation, descriptive statistics and fold planning for the
appliances-energy sensor table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"

FEATURE = "feature"
TARGET = "target"
TIMESTAMP = "timestamp"
RANDOM_CONTROL = "random-control"
KINDS = (FEATURE, TARGET, TIMESTAMP, RANDOM_CONTROL)


class DataError(ValueError):
    """Raised for malformed input files or invalid frame queries."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    unit: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown column kind {self.kind!r} for {self.name!r}")


def _sensor_pairs() -> list[ColumnSchema]:
    cols = []
    for i in range(1, 10):
        cols.append(ColumnSchema(f"T{i}", "°C", FEATURE))
        cols.append(ColumnSchema(f"RH_{i}", "%", FEATURE))
    return cols


# Column order of the public CSV.
APPLIANCES_SCHEMA: tuple[ColumnSchema, ...] = tuple(
    [
        ColumnSchema("date", "unitless", TIMESTAMP),
        ColumnSchema("Appliances", "Wh", TARGET),
        ColumnSchema("lights", "Wh", FEATURE),
    ]
    + _sensor_pairs()
    + [
        ColumnSchema("T_out", "°C", FEATURE),
        ColumnSchema("Press_mm_hg", "mm Hg", FEATURE),
        ColumnSchema("RH_out", "%", FEATURE),
        ColumnSchema("Windspeed", "m/s", FEATURE),
        ColumnSchema("Visibility", "km", FEATURE),
        ColumnSchema("Tdewpoint", "°C", FEATURE),
        ColumnSchema("rv1", "unitless", RANDOM_CONTROL),
        ColumnSchema("rv2", "unitless", RANDOM_CONTROL),
    ]
)
APPLIANCES_COLUMNS = tuple(c.name for c in APPLIANCES_SCHEMA)


@dataclass(frozen=True)
class Frame:
    """Named numeric columns plus a row mask.

    The timestamp column is stored as POSIX seconds (naive times read as UTC).
    Rows are never reordered; filtering only clears entries of ``active_mask``.
    """

    schema: tuple[ColumnSchema, ...]
    columns: dict[str, np.ndarray]
    active_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        kinds = [c.kind for c in self.schema]
        if kinds.count(TARGET) != 1:
            raise DataError("exactly one target column is required")
        if kinds.count(TIMESTAMP) != 1:
            raise DataError("exactly one timestamp column is required")
        if set(names) != set(self.columns):
            raise DataError("schema and column data disagree")
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DataError("all columns must have the same length")
        n = lengths.pop() if lengths else 0
        mask = self.active_mask
        if mask is None:
            mask = np.ones(n, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise DataError("active_mask length must equal n_rows")
        mask.setflags(write=False)
        object.__setattr__(self, "active_mask", mask)
        for arr in self.columns.values():
            arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.active_mask)

    @property
    def n_active(self) -> int:
        return int(self.active_mask.sum())

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column_schema(self, name: str) -> ColumnSchema:
        for c in self.schema:
            if c.name == name:
                return c
        raise DataError(f"unknown column {name!r}")

    @property
    def target(self) -> str:
        return next(c.name for c in self.schema if c.kind == TARGET)

    @property
    def timestamp(self) -> str:
        return next(c.name for c in self.schema if c.kind == TIMESTAMP)

    def feature_names(self, include_random: bool = True) -> list[str]:
        kinds = {FEATURE, RANDOM_CONTROL} if include_random else {FEATURE}
        return [c.name for c in self.schema if c.kind in kinds]

    def active_values(self, name: str) -> np.ndarray:
        self.column_schema(name)
        return self.columns[name][self.active_mask]

    def matrix(self, names: Sequence[str], active_only: bool = True) -> np.ndarray:
        for n in names:
            self.column_schema(n)
        X = np.column_stack([self.columns[n] for n in names]) if names else np.empty((self.n_rows, 0))
        X = np.ascontiguousarray(X, dtype=np.float64)
        return X[self.active_mask] if active_only else X

    def with_mask(self, mask: np.ndarray) -> "Frame":
        """New frame whose mask is ``active_mask & mask``; the mask only shrinks."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_rows,):
            raise DataError("mask length must equal n_rows")
        return replace(self, active_mask=self.active_mask & mask)

    def with_columns(self, new: Iterable[tuple[ColumnSchema, np.ndarray]]) -> "Frame":
        schema = list(self.schema)
        cols = dict(self.columns)
        for col, values in new:
            if col.name in cols:
                raise DataError(f"column {col.name!r} already exists")
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (self.n_rows,):
                raise DataError(f"column {col.name!r} has the wrong length")
            schema.append(col)
            cols[col.name] = values
        return Frame(tuple(schema), cols, self.active_mask.copy())

    def compact(self) -> "Frame":
        """Drop masked rows, returning a frame with an all-true mask."""
        cols = {k: v[self.active_mask].copy() for k, v in self.columns.items()}
        return Frame(self.schema, cols)


def _parse_timestamp(text: str, line: int, column: str) -> float:
    try:
        dt = datetime.strptime(text.strip(), TIMESTAMP_FORMAT)
    except ValueError:
        raise DataError(f"row {line}, column {column!r}: malformed timestamp {text!r}") from None
    return dt.replace(tzinfo=timezone.utc).timestamp()


def format_timestamp(seconds: float) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime(TIMESTAMP_FORMAT)


def load_csv(path: str | Path, schema_mode: str = "strict") -> Frame:
    """Read the sensor CSV into a :class:`Frame`.

    ``strict`` requires every column of the public file header; ``infer``
    accepts any header that has ``date`` and ``Appliances`` and treats unknown
    columns as unitless features. Row numbers in errors are file line numbers
    (the header is line 1).
    """
    if schema_mode not in ("strict", "infer"):
        raise ValueError(f"schema_mode must be 'strict' or 'infer', got {schema_mode!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    known = {c.name: c for c in APPLIANCES_SCHEMA}
    if schema_mode == "strict":
        missing = [n for n in APPLIANCES_COLUMNS if n not in header]
        if missing:
            raise DataError(f"{path}: missing header column(s) {missing}")
    else:
        for required in ("date", "Appliances"):
            if required not in header:
                raise DataError(f"{path}: missing header column {required!r}")
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate header names")

    schema = tuple(known.get(h, ColumnSchema(h, "unitless", FEATURE)) for h in header)
    n = len(rows)
    data = {h: np.empty(n, dtype=np.float64) for h in header}
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"row {line}: expected {len(header)} fields, got {len(row)}")
        for col, text in zip(schema, row):
            if col.kind == TIMESTAMP:
                data[col.name][i] = _parse_timestamp(text, line, col.name)
                continue
            try:
                value = float(text)
            except ValueError:
                raise DataError(f"row {line}, column {col.name!r}: cannot parse {text!r} as a number") from None
            if np.isnan(value):
                raise DataError(f"row {line}, column {col.name!r}: missing value")
            data[col.name][i] = value
    return Frame(schema, data)


def save_csv(frame: Frame, path: str | Path, active_only: bool = False) -> None:
    """Write ``frame`` in the input CSV format; floats use shortest round-trip repr."""
    mask = frame.active_mask if active_only else np.ones(frame.n_rows, dtype=bool)
    ts = frame.timestamp
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(frame.names)
        for i in np.flatnonzero(mask):
            w.writerow(
                format_timestamp(frame.columns[n][i]) if n == ts else repr(float(frame.columns[n][i]))
                for n in frame.names
            )


def derive_calendar(frame: Frame) -> Frame:
    """Add ``Ws`` (weekday=1, weekend=0) and ``Day`` (Monday=1 .. Sunday=7)."""
    ts = frame.columns[frame.timestamp]
    if not np.all(np.isfinite(ts)):
        raise DataError("malformed timestamp in frame")
    days = (np.floor(ts / 86400.0).astype(np.int64) + 3) % 7 + 1  # 1970-01-01 was a Thursday
    ws = (days <= 5).astype(np.float64)
    return frame.with_columns(
        [
            (ColumnSchema("Ws", "1,0", FEATURE), ws),
            (ColumnSchema("Day", "[1,7]", FEATURE), days.astype(np.float64)),
        ]
    )


@dataclass(frozen=True)
class ColumnStats:
    min: float
    max: float
    mean: float
    median: float
    std: float


def _sample_std(values: np.ndarray) -> float:
    # deviations are scaled before squaring so tiny spreads do not underflow
    dev = values - values.mean()
    scale = np.abs(dev).max()
    if scale == 0.0:
        dev = values - values.min()
        scale = np.abs(dev).max()
    return float(scale * np.sqrt(np.sum((dev / scale) ** 2) / (values.size - 1)))


def describe(frame: Frame, column: str) -> ColumnStats:
    values = frame.active_values(column)
    if values.size == 0:
        raise DataError("describe needs at least one active row")
    # a constant column has zero spread even when its mean is not representable
    constant = values.min() == values.max()
    std = 0.0 if constant or values.size < 2 else _sample_std(values)
    return ColumnStats(
        float(values.min()), float(values.max()), float(values.mean()), float(np.median(values)), std
    )


STATS_FIELDS = ("min", "max", "mean", "median", "std")


def stats_to_csv(stats: dict[str, ColumnStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["column", *STATS_FIELDS])
    for name, s in stats.items():
        w.writerow([name, *(f"{getattr(s, f):.3f}" for f in STATS_FIELDS)])
    return buf.getvalue()


def pearson_matrix(frame: Frame, columns: Sequence[str]) -> np.ndarray:
    X = frame.matrix(list(columns))
    if X.shape[0] < 2:
        raise DataError("pearson_matrix needs at least two active rows")
    centered = X - X.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    for name, nrm in zip(columns, norms):
        if nrm == 0.0:
            raise DataError(f"column {name!r} is constant; correlation undefined")
    unit = centered / norms
    P = unit.T @ unit
    P = np.clip((P + P.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(P, 1.0)
    return P


def matrix_to_csv(P: np.ndarray, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *columns])
    for name, row in zip(columns, P):
        w.writerow([name, *(f"{v:.6f}" for v in row)])
    return buf.getvalue()


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    repeats: tuple[tuple[int, int], ...]

    def fold_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def split(self, repeat: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(train, validation, test) row positions for one repeat."""
        test_fold, val_fold = self.repeats[repeat]
        test = self.fold_rows(test_fold)
        val = self.fold_rows(val_fold)
        train = np.flatnonzero((self.assignments != test_fold) & (self.assignments != val_fold))
        return train, val, test


def make_folds(n_rows: int, k: int, seed: int) -> FoldPlan:
    """Shuffled k-fold assignment; repeat i tests on fold i and validates on fold i+1."""
    if k < 2:
        raise DataError("k must be at least 2")
    if k > n_rows:
        raise DataError(f"k={k} exceeds n_rows={n_rows}")
    perm = np.random.default_rng(seed).permutation(n_rows)
    assignments = np.empty(n_rows, dtype=np.int64)
    assignments[perm] = np.arange(n_rows) % k
    assignments.setflags(write=False)
    return FoldPlan(k, assignments, tuple((i, (i + 1) % k) for i in range(k)))
