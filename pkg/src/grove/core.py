"""Data model, configuration and dataset ingestion.

Features live in the unit cube ``[0, 1]^d``; the optional treatment column is
binary.  Everything here is immutable once constructed.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or out-of-domain training data."""


class ConfigError(ValueError):
    """A ForestConfig that cannot be used with the given data."""


class Mode(str, enum.Enum):
    REGRESSION_DOUBLE_SAMPLE = "regression_double_sample"
    CAUSAL_DOUBLE_SAMPLE = "causal_double_sample"
    PROPENSITY = "propensity"
    CAUSAL_ADAPTIVE = "causal_adaptive"
    # depth-0 trees averaging the whole subsample; oracle use only
    TRIVIAL = "trivial"

    @property
    def double_sample(self) -> bool:
        return self in (Mode.REGRESSION_DOUBLE_SAMPLE, Mode.CAUSAL_DOUBLE_SAMPLE)

    @property
    def needs_treatment(self) -> bool:
        return self in (Mode.CAUSAL_DOUBLE_SAMPLE, Mode.PROPENSITY, Mode.CAUSAL_ADAPTIVE)


@dataclass(frozen=True)
class Sample:
    x: tuple[float, ...]
    y: float
    w: int | None = None

    def __post_init__(self):
        if any(not (0.0 <= v <= 1.0) for v in self.x):
            raise DataError("feature out of range")
        if self.w is not None and self.w not in (0, 1):
            raise DataError("treatment not binary")


class Dataset:
    """Training rows held as column arrays.

    Parameters
    ----------
    X : array of shape (n, d), entries in [0, 1]
    y : array of shape (n,)
    w : optional int array of shape (n,), entries in {0, 1}
    """

    __slots__ = ("X", "y", "w")

    def __init__(self, X, y, w=None):
        X = np.array(X, dtype=np.float64, ndmin=2, order="C")
        y = np.array(y, dtype=np.float64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[0] < 1:
            raise DataError("dataset must contain at least one row")
        if X.shape[1] < 1:
            raise DataError("dataset must have at least one feature")
        bad = np.flatnonzero(~((X >= 0.0) & (X <= 1.0)).all(axis=1))
        if bad.size:
            raise DataError(f"feature out of range, row {bad[0] + 1}")
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise DataError(f"response not finite, row {bad[0] + 1}")
        if w is not None:
            w_arr = np.asarray(w)
            bad = np.flatnonzero((w_arr != 0) & (w_arr != 1))
            if bad.size:
                raise DataError(f"treatment not binary, row {bad[0] + 1}")
            w = w_arr.astype(np.int8)
            w.flags.writeable = False
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        if not samples:
            raise DataError("dataset must contain at least one row")
        d = len(samples[0].x)
        if any(len(s.x) != d for s in samples):
            raise DataError("samples disagree on feature dimension")
        has_w = samples[0].w is not None
        if any((s.w is not None) != has_w for s in samples):
            raise DataError("treatment present on some samples only")
        X = [s.x for s in samples]
        y = [s.y for s in samples]
        w = [s.w for s in samples] if has_w else None
        return cls(X, y, w)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def has_treatment(self) -> bool:
        return self.w is not None

    @property
    def samples(self) -> list[Sample]:
        w = self.w if self.w is not None else [None] * self.n
        return [Sample(tuple(x), float(y), None if wi is None else int(wi))
                for x, y, wi in zip(self.X.tolist(), self.y.tolist(), w)]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows],
                       None if self.w is None else self.w[rows])

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.has_treatment != other.has_treatment:
            return False
        same_w = self.w is None or np.array_equal(self.w, other.w)
        return (self.X.shape == other.X.shape and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y) and same_w)

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, has_treatment={self.has_treatment})"


def _parse_header(header: list[str], expect_treatment: bool) -> tuple[int, bool, bool]:
    cols = [c.strip() for c in header]
    d = 0
    while d < len(cols) and cols[d] == f"x{d + 1}":
        d += 1
    if d == 0:
        raise DataError("header must start with x1")
    rest = cols[d:]
    has_y = bool(rest) and rest[0] == "y"
    if has_y:
        rest = rest[1:]
    has_w = bool(rest) and rest[0] == "w"
    if has_w:
        rest = rest[1:]
    if rest:
        raise DataError(f"unexpected columns in header: {rest}")
    if expect_treatment and not has_w:
        raise DataError("missing treatment column w")
    return d, has_y, has_w


def read_points(path: str | Path) -> np.ndarray:
    """Read the ``x1..xd`` columns of a CSV; extra y/w columns are ignored."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        d, _, _ = _parse_header(header, False)
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                x = [float(v) for v in row[:d]]
            except ValueError:
                raise DataError(f"malformed row, row {lineno}") from None
            if len(x) != d:
                raise DataError(f"malformed row, row {lineno}")
            if any(not (0.0 <= v <= 1.0) for v in x):
                raise DataError(f"feature out of range, row {lineno}")
            rows.append(x)
    return np.array(rows, dtype=np.float64).reshape(-1, d)


def load_dataset(path: str | Path, expect_treatment: bool = False) -> Dataset:
    """Parse a ``x1,...,xd,y[,w]`` CSV file into a validated Dataset.

    Errors carry the 1-based data row number (the header is row 0).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        d, has_y, has_w = _parse_header(header, expect_treatment)
        if not has_y:
            raise DataError("missing response column y")
        width = d + 1 + has_w
        X, y, w = [], [], []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"malformed row, row {lineno}: expected {width} fields")
            try:
                vals = [float(v) for v in row[:d + 1]]
            except ValueError:
                raise DataError(f"malformed row, row {lineno}") from None
            if any(not (0.0 <= v <= 1.0) for v in vals[:d]):
                raise DataError(f"feature out of range, row {lineno}")
            if not math.isfinite(vals[d]):
                raise DataError(f"response not finite, row {lineno}")
            if has_w:
                raw = row[d + 1].strip()
                try:
                    wv = float(raw)
                except ValueError:
                    raise DataError(f"treatment not binary, row {lineno}") from None
                if wv not in (0.0, 1.0):
                    raise DataError(f"treatment not binary, row {lineno}")
                w.append(int(wv))
            X.append(vals[:d])
            y.append(vals[d])
    if not X:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(X).reshape(-1, d), y, w if has_w else None)


def save_dataset(data: Dataset, path: str | Path) -> None:
    header = [f"x{j + 1}" for j in range(data.d)] + ["y"]
    if data.has_treatment:
        header.append("w")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n):
            # repr round-trips float64 exactly
            row = [repr(v) for v in data.X[i].tolist()] + [repr(float(data.y[i]))]
            if data.has_treatment:
                row.append(str(int(data.w[i])))
            writer.writerow(row)


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyper-parameters.

    ``num_trees=None`` means one tree per training row (B = n).
    """

    num_trees: int | None = None
    subsample_size: int = 50
    min_leaf: int = 1
    alpha: float = 0.05
    pi: float = 0.2
    mode: Mode = Mode.CAUSAL_DOUBLE_SAMPLE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))

    def trees_for(self, n: int) -> int:
        return n if self.num_trees is None else self.num_trees

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ForestConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)


def load_config(path: str | Path) -> ForestConfig:
    with open(path) as fh:
        return ForestConfig.from_dict(json.load(fh))


def save_config(cfg: ForestConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)


def check_config(cfg: ForestConfig) -> None:
    """Data-independent checks on a ForestConfig."""
    if cfg.num_trees is not None and (not isinstance(cfg.num_trees, int) or cfg.num_trees < 1):
        raise ConfigError("num_trees must be a positive integer")
    if not isinstance(cfg.subsample_size, int) or cfg.subsample_size < 1:
        raise ConfigError("subsample_size must be a positive integer")
    if not isinstance(cfg.min_leaf, int) or cfg.min_leaf < 1:
        raise ConfigError("min_leaf must be a positive integer")
    if not (0.0 < cfg.alpha <= 0.2):
        raise ConfigError("alpha must lie in (0, 0.2]")
    if not (0.0 < cfg.pi <= 1.0):
        raise ConfigError("pi must lie in (0, 1]")
    if not (0 <= cfg.seed < 2**64):
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if cfg.mode.double_sample and cfg.subsample_size // 2 < cfg.min_leaf:
        raise ConfigError("subsample too small: floor(s/2) < min_leaf")


def validate_config(cfg: ForestConfig, data: Dataset) -> None:
    """Raise ConfigError unless ``cfg`` can be trained on ``data``."""
    check_config(cfg)
    if cfg.mode is Mode.TRIVIAL:
        raise ConfigError("trivial mode is reserved for exact enumeration")
    if cfg.subsample_size > data.n:
        raise ConfigError(f"subsample exceeds n ({cfg.subsample_size} > {data.n})")
    if cfg.mode.needs_treatment and not data.has_treatment:
        raise ConfigError(f"mode {cfg.mode.value} requires a treatment column")


def beta_min(alpha: float, pi: float, d: int) -> float:
    """Lower bound on the subsample growth exponent, ``s ~ n**beta``.

    >>> round(beta_min(0.2, 1.0, 1), 4)
    0.8782
    """
    if not (0.0 < alpha <= 0.2):
        raise ValueError("alpha must lie in (0, 0.2]")
    if not (0.0 < pi <= 1.0):
        raise ValueError("pi must lie in (0, 1]")
    if d < 1:
        raise ValueError("d must be at least 1")
    ratio = math.log(1.0 / alpha) / math.log(1.0 / (1.0 - alpha))
    return 1.0 - 1.0 / (1.0 + (d / pi) * ratio)


@dataclass(frozen=True)
class PredictionResult:
    estimate: float
    variance: float
    ci_low: float
    ci_high: float
    ci_level: float = 0.95


def as_points(xs: Iterable, d: int | None = None) -> np.ndarray:
    pts = np.array(xs, dtype=np.float64, ndmin=2)
    if pts.size == 0:
        return pts.reshape(0, d or 0)
    if d is not None and pts.shape[1] != d:
        raise DataError(f"points have {pts.shape[1]} features, expected {d}")
    return np.ascontiguousarray(pts)
