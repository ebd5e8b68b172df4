"""Replicated simulation studies: MSE, interval coverage and variance estimates.

A *cell* fixes a design, a sample size and an estimator.  Each replicate draws
a training set and a set of test points, fits the estimator and scores it
against the known treatment effect.  Cells that share a design, ``n``, ``d``
and replicate count can be run together so that every method sees the same
data in every replicate (``run_cells``).

Randomness per replicate ``r`` of a run seeded with ``seed``:

* training data from the stream keyed ``(seed, 2r)``,
* fresh test points from the stream keyed ``(seed, 2r + 1)``,
* forest seeds from ``SeedSequence([seed, r])``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.stats import norm, skew

from . import __version__
from .baselines import InsufficientDataError, knn_batch
from .core import ConfigError, Dataset, ForestConfig, Mode, check_config
from .forest import TrainingError, forest_average, train
from .inference import interval_variance, z_value
from .sampling import derive_stream
from .simgen import get_design, generate

logger = logging.getLogger(__name__)

Estimator = Callable[[Dataset, np.ndarray], tuple]
Method = Union[str, Estimator]

TABLES = ("t1", "t2", "t3", "grid", "dense", "honesty", "qq")
MIN_N = 200
MIN_REPLICATIONS = 2
DEFAULT_TEST_POINTS = 1000
TEST_POINT_PROTOCOL = "fresh U([0,1]^d) draws per replicate, independent of the training rows"

_FOREST_MODES = {Mode.PROPENSITY, Mode.CAUSAL_DOUBLE_SAMPLE, Mode.CAUSAL_ADAPTIVE}


@dataclass(frozen=True)
class CellSpec:
    """What to run.  ``method`` is a forest mode name, ``"knn-K"``, or a callable.

    A callable receives ``(train: Dataset, points: (q, d) array)`` and returns
    ``(estimates, variances)``.  ``s`` and ``B`` apply to forests only (``B``
    defaults to ``n``); ``k`` is the forest's minimum leaf size.
    ``points`` fixes the evaluation points instead of drawing ``test_points``
    fresh ones per replicate.
    """

    design: str
    n: int
    d: int
    method: Method
    s: int | None = None
    B: int | None = None
    k: int = 1
    replications: int = 10
    q: int | None = None
    test_points: int = DEFAULT_TEST_POINTS
    points: tuple | None = None
    alpha: float = ForestConfig.alpha
    pi: float = ForestConfig.pi
    level: float = 0.95

    @property
    def method_name(self) -> str:
        if isinstance(self.method, str):
            return self.method
        return getattr(self.method, "__name__", type(self.method).__name__)

    def data_key(self) -> tuple:
        return (self.design, self.n, self.d, self.q, self.replications,
                self.test_points, self.points)


@dataclass
class ExperimentCell:
    design: str
    n: int
    d: int
    s: int | None
    B: int | None
    k: int | None
    method: str
    replications: int
    mse: float
    mse_se: float
    coverage: float
    coverage_se: float
    mean_variance: float
    bias: float
    bias_se: float
    failures: int = 0
    q: int | None = None
    seconds: float = 0.0

    @property
    def rmse(self) -> float:
        return math.sqrt(self.mse)

    def to_row(self) -> dict:
        return asdict(self)


CELL_FIELDS = [f.name for f in fields(ExperimentCell)]


def _subseed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0])


def _forest_config(spec: CellSpec, seed: int) -> ForestConfig:
    return ForestConfig(num_trees=spec.B, subsample_size=spec.s, min_leaf=spec.k,
                        alpha=spec.alpha, pi=spec.pi, mode=Mode(spec.method), seed=seed)


def _knn_k(method: str) -> int | None:
    if method.startswith("knn-"):
        try:
            return int(method[4:])
        except ValueError:
            pass
    return None


def _check_spec(spec: CellSpec) -> None:
    get_design(spec.design, spec.d, spec.q)
    if spec.replications < 1:
        raise ValueError("need at least one replication")
    if spec.points is None and spec.test_points < 1:
        raise ValueError("need at least one test point")
    if callable(spec.method):
        return
    if _knn_k(spec.method) is not None:
        if _knn_k(spec.method) < 2:
            raise ValueError("k-NN intervals need k >= 2")
        return
    try:
        mode = Mode(spec.method)
    except ValueError:
        raise ValueError(f"unknown method {spec.method!r}") from None
    if mode not in _FOREST_MODES:
        raise ValueError(f"{mode.value} does not estimate treatment effects")
    if spec.s is None:
        raise ValueError("forest cells need a subsample size s")
    if spec.s >= spec.n:
        raise ConfigError("subsample must be smaller than n for variance estimates")
    check_config(_forest_config(spec, 0))


def _estimate(spec: CellSpec, data: Dataset, pts: np.ndarray, forest_seed: int):
    if callable(spec.method):
        est, var = spec.method(data, pts)
        return np.asarray(est, dtype=np.float64), np.asarray(var, dtype=np.float64)
    k = _knn_k(spec.method)
    if k is not None:
        return knn_batch(data, pts, k)
    forest = train(data, _forest_config(spec, forest_seed))
    P = forest.tree_predictions(pts)
    return forest_average(P), interval_variance(forest, P)


def _se(values: np.ndarray) -> float:
    if values.size < 2:
        return float("nan")
    return float(values.std(ddof=1) / math.sqrt(values.size))


def _aggregate(spec: CellSpec, rows: list, failures: int, seconds: float) -> ExperimentCell:
    ok = np.array([r for r in rows if r is not None], dtype=np.float64).reshape(-1, 4)
    mse, cov, var, bias = (ok[:, j] for j in range(4))
    mean = (lambda a: float(a.mean()) if a.size else float("nan"))
    forest = isinstance(spec.method, str) and _knn_k(spec.method) is None
    return ExperimentCell(
        design=spec.design, n=spec.n, d=spec.d,
        s=spec.s if forest else None,
        B=(spec.B if spec.B is not None else spec.n) if forest else None,
        k=spec.k if forest else _knn_k(spec.method) if isinstance(spec.method, str) else None,
        method=spec.method_name, replications=int(ok.shape[0]),
        mse=mean(mse), mse_se=_se(mse), coverage=mean(cov), coverage_se=_se(cov),
        mean_variance=mean(var), bias=mean(bias), bias_se=_se(bias),
        failures=failures, q=spec.q, seconds=seconds,
    )


def run_cells(specs: Sequence[CellSpec], seed: int, workers: int = 1) -> list[ExperimentCell]:
    """Run several methods on shared replicate data; one ExperimentCell per spec.

    Replicates are independent and may run on ``workers`` threads; results are
    aggregated in replicate order, so the output does not depend on ``workers``.
    """
    specs = list(specs)
    if not specs:
        return []
    keys = {s.data_key() for s in specs}
    if len(keys) != 1:
        raise ValueError("cells run together must share design, n, d, q and replications")
    for spec in specs:
        _check_spec(spec)
    lead = specs[0]
    design = get_design(lead.design, lead.d, lead.q)
    z = z_value(lead.level)

    def replicate(r: int):
        data = generate(design, lead.n, derive_stream(seed, 2 * r))
        if lead.points is not None:
            pts = np.asarray(lead.points, dtype=np.float64).reshape(-1, lead.d)
        else:
            pts = derive_stream(seed, 2 * r + 1).random((lead.test_points, lead.d))
        tau = design.true_tau(pts)
        out = []
        for spec in specs:
            t0 = time.perf_counter()
            try:
                est, var = _estimate(spec, data, pts, _subseed(seed, r))
            except (TrainingError, InsufficientDataError) as exc:
                logger.warning("replicate %d of %s failed: %s", r, spec.method_name, exc)
                out.append((None, time.perf_counter() - t0))
                continue
            half = z * np.sqrt(np.maximum(var, 0.0))
            hit = (est - half <= tau) & (tau <= est + half)
            err = est - tau
            out.append(((float(np.mean(err ** 2)), float(np.mean(hit)),
                         float(np.mean(var)), float(np.mean(err))),
                        time.perf_counter() - t0))
        return out

    reps = range(lead.replications)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(replicate, reps))
    else:
        results = [replicate(r) for r in reps]

    cells = []
    for j, spec in enumerate(specs):
        rows = [res[j][0] for res in results]
        seconds = sum(res[j][1] for res in results)
        cells.append(_aggregate(spec, rows, rows.count(None), seconds))
    return cells


def run_cell(spec: CellSpec, seed: int, workers: int = 1) -> ExperimentCell:
    return run_cells([spec], seed, workers)[0]


# ---------------------------------------------------------------------------
# table definitions


@dataclass(frozen=True)
class _Group:
    design: str
    n: int
    d: int
    replications: int
    methods: tuple  # (method, s, B, k)
    q: int | None = None
    points: tuple | None = None


def scale_plan(replications: int, n: int, scale: float) -> tuple[int, int]:
    """Scaled (replications, n): replications shrink first, then ``n`` (floor 200)."""
    if not (0.0 < scale <= 1.0):
        raise ValueError("scale must lie in (0, 1]")
    floor = min(MIN_REPLICATIONS, replications)
    reps = max(floor, round(replications * scale))
    remaining = scale * replications / reps
    if remaining >= 1.0:
        return reps, n
    return reps, max(MIN_N, min(n, round(n * remaining)))


def _honesty_sizes(n: int) -> tuple[int, int]:
    adaptive = round(n ** 0.8)
    return adaptive, min(2 * adaptive, n - 1)


def _groups(table: str) -> list[_Group]:
    prop, dbl, adapt = (Mode.PROPENSITY.value, Mode.CAUSAL_DOUBLE_SAMPLE.value,
                        Mode.CAUSAL_ADAPTIVE.value)
    if table == "t1":
        return [_Group("confounded", 500, d, 500,
                       ((prop, 50, 1000, 1), ("knn-10",), ("knn-100",)))
                for d in (2, 5, 10, 15, 20, 30)]
    if table == "t2":
        return [_Group("smooth", 5000, d, 25,
                       ((dbl, 2500, 2000, 1), ("knn-7",), ("knn-50",)))
                for d in (2, 3, 4, 5, 6, 8)]
    if table == "t3":
        return [_Group("spike", 10000, d, 40,
                       ((dbl, 2000, 10000, 1), ("knn-10",), ("knn-100",)))
                for d in (2, 3, 4, 5, 6, 8)]
    if table == "grid":
        fracs = (1 / 10, 1 / 5, 1 / 4, 1 / 3, 1 / 2, 2 / 3)
        return [_Group("smooth", n, d, 10, tuple((dbl, round(n * f), n, 1) for f in fracs))
                for n in (1000, 2000, 5000, 10000) for d in (2, 3, 4, 5, 6, 8)]
    if table == "dense":
        return [_Group("dense", 5000, d, 20,
                       ((dbl, 2500, 2000, 1), ("knn-10",), ("knn-100",)), q=q)
                for d in (6, 12) for q in (2, 4, 6)]
    if table == "honesty":
        groups = []
        for n in (1000, 2500, 5000):
            sa, sh = _honesty_sizes(n)
            groups.append(_Group("corner", n, 10, 40,
                                 ((adapt, sa, 500, 1), (dbl, sh, 500, 1)),
                                 points=((0.0,) * 10,)))
        return groups
    raise ValueError(f"unknown table {table!r}; choose from {TABLES[:-1]}")


def table_specs(table: str, scale: float = 1.0) -> list[list[CellSpec]]:
    """The cell specs of ``table``, grouped by shared replicate data."""
    out = []
    for g in _groups(table):
        reps, n = scale_plan(g.replications, g.n, scale)
        ratio = n / g.n
        specs = []
        for m in g.methods:
            if len(m) == 1:
                specs.append(CellSpec(g.design, n, g.d, m[0], replications=reps,
                                      q=g.q, points=g.points))
                continue
            method, s, B, k = m
            if ratio < 1.0:
                s = max(2 * k, min(n - 1, round(s * ratio)))
                B = max(2, round(B * ratio))
            specs.append(CellSpec(g.design, n, g.d, method, s=s, B=B, k=k,
                                  replications=reps, q=g.q, points=g.points))
        out.append(specs)
    return out


def run_table(table: str, scale: float = 1.0, seed: int = 0,
              workers: int = 1) -> list[ExperimentCell]:
    """Every cell of ``table``; group ``i`` is seeded from ``(seed, i)``."""
    cells = []
    for i, specs in enumerate(table_specs(table, scale)):
        group_seed = _subseed(seed, i)
        logger.info("%s group %d: %s n=%d d=%d", table, i, specs[0].design,
                    specs[0].n, specs[0].d)
        cells.extend(run_cells(specs, group_seed, workers))
    return cells


# ---------------------------------------------------------------------------
# normality diagnostic


@dataclass(frozen=True)
class QQResult:
    theoretical: np.ndarray
    sample: np.ndarray
    correlation: float
    skewness: float
    dropped_points: int

    def rows(self):
        return zip(self.theoretical.tolist(), self.sample.tolist())


def qq_diagnostic(design: str = "confounded", n: int = 800, d: int = 20,
                  num_training_sets: int = 20, test_points: int = DEFAULT_TEST_POINTS,
                  seed: int = 0, mode: str = Mode.PROPENSITY.value, s: int = 50,
                  B: int = 1000, k: int = 1, q: int | None = None,
                  workers: int = 1) -> QQResult:
    """Pooled Gaussian QQ data for standardized forest predictions.

    Forest predictions at a fixed set of test points are collected over
    independent training sets, centred and scaled per point by their mean and
    (population) SD across training sets, then pooled and sorted against normal
    quantiles at plotting positions (i - 1/2)/N.  Points whose predictions
    never vary are dropped and counted.
    """
    if num_training_sets < 10:
        raise ValueError("need at least 10 training sets")
    spec = CellSpec(design, n, d, mode, s=s, B=B, k=k, q=q)
    _check_spec(spec)
    dz = get_design(design, d, q)
    pts = derive_stream(seed, 0).random((test_points, d))

    def one(r: int) -> np.ndarray:
        data = generate(dz, n, derive_stream(seed, r + 1))
        forest = train(data, _forest_config(spec, _subseed(seed, r)))
        P = forest.tree_predictions(pts)
        return forest_average(P)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = np.array(list(pool.map(one, range(num_training_sets))))
    else:
        preds = np.array([one(r) for r in range(num_training_sets)])
    sd = preds.std(axis=0)
    keep = sd > 0
    z = (preds[:, keep] - preds[:, keep].mean(axis=0)) / sd[keep]
    sample = np.sort(z.ravel())
    m = sample.size
    theoretical = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    return QQResult(theoretical, sample, float(np.corrcoef(theoretical, sample)[0, 1]),
                    float(skew(sample)), int((~keep).sum()))


# ---------------------------------------------------------------------------
# output


def write_cells_csv(cells: Sequence[ExperimentCell], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CELL_FIELDS, lineterminator="\n")
        writer.writeheader()
        for cell in cells:
            writer.writerow({k: ("" if v is None else v) for k, v in cell.to_row().items()})


def write_table_layout(cells: Sequence[ExperimentCell], path: str | Path) -> None:
    """Wide layout: one row per (design, n, d, q, s), MSE columns then coverage columns."""
    methods = list(dict.fromkeys(c.method for c in cells))
    rows: dict[tuple, dict] = {}
    for c in cells:
        key = (c.design, c.n, c.d, c.q, c.s if len(methods) == 1 else None)
        row = rows.setdefault(key, {"design": c.design, "n": c.n, "d": c.d,
                                    "q": "" if c.q is None else c.q,
                                    "s": "" if key[4] is None else key[4]})
        row[f"{c.method}_mse"] = c.mse
        row[f"{c.method}_coverage"] = c.coverage
    header = (["design", "n", "d", "q", "s"] + [f"{m}_mse" for m in methods]
              + [f"{m}_coverage" for m in methods])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n", restval="")
        writer.writeheader()
        writer.writerows(rows.values())


def run_metadata(**extra) -> dict:
    import numba
    import scipy
    meta = {
        "grove": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
        "test_points": TEST_POINT_PROTOCOL,
    }
    meta.update(extra)
    return meta


def run_experiment(table: str, scale: float, seed: int, out_dir: str | Path,
                   workers: int = 1) -> dict:
    """Run ``table`` (or ``qq``) and write its CSVs plus ``metadata.json`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = []
    if table == "qq":
        sets, _ = scale_plan(20, 800, scale)
        result = qq_diagnostic(num_training_sets=max(10, sets), seed=seed, workers=workers)
        with open(out / "qq.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["theoretical", "sample"])
            writer.writerows(result.rows())
        files.append("qq.csv")
        summary = {"correlation": result.correlation, "skewness": result.skewness,
                   "dropped_points": result.dropped_points}
    else:
        cells = run_table(table, scale, seed, workers)
        write_cells_csv(cells, out / "cells.csv")
        write_table_layout(cells, out / "table.csv")
        files += ["cells.csv", "table.csv"]
        summary = {"cells": len(cells), "failures": sum(c.failures for c in cells)}
    meta = run_metadata(table=table, scale=scale, seed=seed, workers=workers,
                        seconds=round(time.perf_counter() - t0, 3), files=files,
                        summary=summary)
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return meta
