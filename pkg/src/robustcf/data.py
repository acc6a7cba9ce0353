"""Tabular datasets: CSV ingestion, encoding, scaling, splitting, two moons."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .rng import SplitMix64, derive_seed

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ONEHOT = "onehot"
_KINDS = (NUMERIC, CATEGORICAL, ONEHOT)
_MISSING = {"", "na", "nan", "null", "none", "?"}


class SchemaError(ValueError):
    pass


class CsvParseError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnMeta:
    """One feature column.

    ``min``/``max`` are the raw range seen at load/generation time, ``categories``
    the sorted levels of a categorical column, ``group`` the source column of a
    one-hot indicator.
    """

    name: str
    kind: str = NUMERIC
    min: float | None = None
    max: float | None = None
    categories: tuple = ()
    group: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    columns: tuple = field(default=())

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, len(self.columns))
        if X.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be 0 or 1")
        cols = tuple(self.columns) or tuple(ColumnMeta(f"x{j}") for j in range(X.shape[1]))
        if len(cols) != X.shape[1]:
            raise ValueError(f"{len(cols)} column descriptions for {X.shape[1]} features")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.columns)


class Scaler:
    """Per-column min-max scaling; constant columns map to 0."""

    def __init__(self, mins, maxs):
        self.mins = np.asarray(mins, dtype=np.float64)
        self.maxs = np.asarray(maxs, dtype=np.float64)
        if np.any(self.maxs < self.mins):
            raise ValueError("scaler max must be >= min in every column")

    @classmethod
    def fit(cls, X) -> "Scaler":
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            return cls(np.zeros(X.shape[1]), np.zeros(X.shape[1]))
        return cls(X.min(axis=0), X.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.maxs - self.mins

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.mins) / safe, 0.0)

    def inverse_transform(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        return self.mins + Z * self.span


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING


def load_csv(path, columns: Sequence, label: str = "label") -> Dataset:
    """Read a comma-separated file with a header row.

    ``columns`` lists the feature columns as :class:`ColumnMeta` or
    ``(name, kind)`` pairs; the header must contain exactly these names plus
    ``label``, in any order. Categorical cells are stored as integer codes into
    the sorted list of levels. Missing cells (empty, NA, NaN, ?) are rejected.
    """
    metas = [c if isinstance(c, ColumnMeta) else ColumnMeta(*c) for c in columns]
    if any(m.kind == ONEHOT for m in metas):
        raise SchemaError("one-hot columns are produced by one_hot_encode, not loaded")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    expected = [m.name for m in metas] + [label]
    if sorted(header) != sorted(expected) or len(set(header)) != len(header):
        missing = sorted(set(expected) - set(header))
        extra = sorted(set(header) - set(expected))
        raise SchemaError(f"{path}: header mismatch; missing {missing}, unexpected {extra}")
    pos = {name: i for i, name in enumerate(header)}
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]

    raw = []
    for r_i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise CsvParseError(f"{path}: row {r_i}: expected {len(header)} cells, got {len(row)}")
        for name in expected:
            if _is_missing(row[pos[name]]):
                raise CsvParseError(f"{path}: row {r_i}, column {name!r}: missing value {row[pos[name]]!r}")
        raw.append(row)

    n = len(raw)
    y = np.empty(n, dtype=np.int64)
    for r_i, row in enumerate(raw, start=1):
        cell = row[pos[label]].strip()
        try:
            v = float(cell)
        except ValueError:
            raise CsvParseError(f"{path}: row {r_i}, column {label!r}: cannot parse {cell!r}") from None
        if v not in (0.0, 1.0):
            raise CsvParseError(f"{path}: row {r_i}, column {label!r}: label must be 0 or 1, got {cell!r}")
        y[r_i - 1] = int(v)

    X = np.empty((n, len(metas)))
    out_meta = []
    for j, meta in enumerate(metas):
        cells = [row[pos[meta.name]].strip() for row in raw]
        if meta.kind == CATEGORICAL:
            levels = tuple(sorted(set(cells)))
            code = {lv: i for i, lv in enumerate(levels)}
            X[:, j] = [code[c] for c in cells]
            out_meta.append(replace(meta, categories=levels))
            continue
        for r_i, cell in enumerate(cells, start=1):
            try:
                X[r_i - 1, j] = float(cell)
            except ValueError:
                raise CsvParseError(f"{path}: row {r_i}, column {meta.name!r}: cannot parse {cell!r}") from None
        lo = float(X[:, j].min()) if n else None
        hi = float(X[:, j].max()) if n else None
        out_meta.append(replace(meta, min=lo, max=hi))
    return Dataset(X, y, tuple(out_meta))


def one_hot_encode(data: Dataset, categorical: Sequence[str] | None = None) -> Dataset:
    """Expand categorical columns into indicator groups named ``col=level``."""
    names = set(categorical) if categorical is not None else {
        c.name for c in data.columns if c.kind == CATEGORICAL
    }
    unknown = names - set(data.column_names)
    if unknown:
        raise SchemaError(f"unknown columns {sorted(unknown)}")
    blocks, metas = [], []
    for j, meta in enumerate(data.columns):
        col = data.features[:, j]
        if meta.name not in names:
            blocks.append(col[:, None])
            metas.append(meta)
            continue
        if meta.kind != CATEGORICAL:
            raise SchemaError(f"column {meta.name!r} is {meta.kind}, not categorical")
        levels = meta.categories or tuple(str(v) for v in np.unique(col))
        codes = col.astype(np.int64)
        onehot = (codes[:, None] == np.arange(len(levels))[None, :]).astype(np.float64)
        blocks.append(onehot)
        metas.extend(ColumnMeta(f"{meta.name}={lv}", ONEHOT, 0.0, 1.0, group=meta.name) for lv in levels)
    X = np.hstack(blocks) if blocks else data.features
    return Dataset(X, data.labels, tuple(metas))


def normalize_minmax(data: Dataset) -> tuple[Dataset, Scaler]:
    """Scale every column to ``[0, 1]`` using its own min and max.

    One-hot columns pass through unchanged (they are already 0/1); unencoded
    categorical columns are an error.
    """
    cat = [c.name for c in data.columns if c.kind == CATEGORICAL]
    if cat:
        raise SchemaError(f"one-hot encode categorical columns before normalizing: {cat}")
    scaler = Scaler.fit(data.features)
    onehot = np.array([c.kind == ONEHOT for c in data.columns], dtype=bool)
    scaler.mins[onehot] = 0.0
    scaler.maxs[onehot] = 1.0
    return Dataset(scaler.transform(data.features), data.labels, data.columns), scaler


def split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``round(test_fraction * n)`` rows form the test set."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if data.n < 2:
        raise ValueError("need at least 2 rows to split")
    n_test = min(max(int(round(test_fraction * data.n)), 1), data.n - 1)
    perm = SplitMix64(derive_seed(seed, "split")).permutation(data.n)
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def leave_out_resample(data: Dataset, fraction: float, seed: int) -> Dataset:
    """Drop ``floor(fraction * n)`` rows chosen uniformly without replacement."""
    if not 0 <= fraction < 1:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    n_drop = int(np.floor(fraction * data.n))
    if n_drop == 0:
        return data
    drop = SplitMix64(derive_seed(seed, "leave-out")).choice(data.n, n_drop)
    keep = np.setdiff1d(np.arange(data.n), drop)
    return data.subset(keep)


def moons_raw(n: int, noise_std: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Un-normalized two moons: outer arc ``(cos t, sin t)`` is class 0, inner arc
    ``(1 - cos t, 0.5 - sin t)`` class 1, ``t`` evenly spaced on ``[0, pi]``.
    Rows are shuffled, then Gaussian noise is added."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    X = np.vstack([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)]),
    ]) if n else np.zeros((0, 2))
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    perm = SplitMix64(derive_seed(seed, "moons", "shuffle")).permutation(n)
    X, y = X[perm], y[perm]
    if noise_std > 0 and n:
        X = X + noise_std * SplitMix64(derive_seed(seed, "moons", "noise")).normal((n, 2))
    return X, y


def make_moons(n: int, noise_std: float, seed: int, normalize: bool = True) -> Dataset:
    """Two interleaving half circles, min-max normalized to ``[0, 1]^2`` by default.

    The raw range is kept in the column metadata, so
    ``scaler_from_columns(ds.columns)`` undoes the normalization.
    """
    X, y = moons_raw(n, noise_std, seed)
    if n:
        metas = tuple(ColumnMeta(f"x{j}", NUMERIC, float(X[:, j].min()), float(X[:, j].max())) for j in range(2))
    else:
        metas = (ColumnMeta("x0"), ColumnMeta("x1"))
    ds = Dataset(X, y, metas)
    if normalize and n:
        ds = normalize_minmax(ds)[0]
    return ds


def scaler_from_columns(columns: Sequence[ColumnMeta]) -> Scaler:
    mins = [c.min if c.min is not None else 0.0 for c in columns]
    maxs = [c.max if c.max is not None else 1.0 for c in columns]
    return Scaler(mins, maxs)
