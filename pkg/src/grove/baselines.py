"""k-nearest-neighbour matching estimator of treatment effects.

Neighbours are found per treatment arm by Euclidean distance.  Distance ties
go to the row that comes first after sorting rows by (x lexicographically,
y, w), so the answer never depends on row order in the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, as_points


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class KnnEstimate:
    estimate: float
    variance: float | None
    neighbors_treated: list[int]
    neighbors_control: list[int]


def canonical_order(data: Dataset) -> np.ndarray:
    """Row indices sorted by (x1, ..., xd, y, w), ties by original index."""
    keys = [np.arange(data.n)]
    if data.w is not None:
        keys.append(data.w)
    keys.append(data.y)
    keys.extend(data.X[:, j] for j in reversed(range(data.d)))
    # lexsort treats the last key as primary
    return np.lexsort(keys)


def _check_arms(data: Dataset, k: int, with_variance: bool) -> None:
    if data.w is None:
        raise InsufficientDataError("k-NN matching needs a treatment column")
    if k < 1:
        raise ValueError("k must be positive")
    if with_variance and k < 2:
        raise ValueError("variance needs k >= 2")
    treated = int(data.w.sum())
    if treated < k or data.n - treated < k:
        raise InsufficientDataError(
            f"need {k} rows per arm, have {treated} treated and {data.n - treated} control")


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def _sum_sq(values) -> float:
    mu = _mean(values)
    return math.fsum((v - mu) ** 2 for v in values)


def _summarize(data: Dataset, nt: np.ndarray, nc: np.ndarray, k: int,
               with_variance: bool) -> KnnEstimate:
    yt = data.y[nt].tolist()
    yc = data.y[nc].tolist()
    variance = None
    if with_variance:
        variance = (_sum_sq(yt) + _sum_sq(yc)) / (k * (k - 1))
    return KnnEstimate(_mean(yt) - _mean(yc), variance, nt.tolist(), nc.tolist())


def knn_estimate(data: Dataset, x, k: int, with_variance: bool = True) -> KnnEstimate:
    """Difference of the mean responses of the k nearest treated and control rows.

    The variance is (V(S0) + V(S1)) / (k (k - 1)) with V the sum of squared
    deviations within each neighbour set, i.e. s0^2/k + s1^2/k, the usual
    variance of a difference of two means.
    """
    _check_arms(data, k, with_variance)
    x = as_points([x], data.d)[0]
    order = canonical_order(data)
    dist = ((data.X[order] - x) ** 2).sum(axis=1)
    w = data.w[order]
    picked = []
    for arm in (1, 0):
        pos = np.flatnonzero(w == arm)
        nearest = pos[np.argsort(dist[pos], kind="stable")[:k]]
        picked.append(order[nearest])
    return _summarize(data, picked[0], picked[1], k, with_variance)


def knn_batch(data: Dataset, xs, k: int, with_variance: bool = True,
              chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``knn_estimate`` over many points; returns (estimates, variances)."""
    _check_arms(data, k, with_variance)
    pts = as_points(xs, data.d)
    order = canonical_order(data)
    Xo = data.X[order]
    yo = data.y[order]
    wo = data.w[order]
    est = np.empty(pts.shape[0])
    var = np.full(pts.shape[0], np.nan)
    arms = {}
    for arm in (1, 0):
        pos = np.flatnonzero(wo == arm)
        arms[arm] = (Xo[pos], yo[pos])
    for lo in range(0, pts.shape[0], chunk):
        q = pts[lo:lo + chunk]
        means = {}
        variances = {}
        for arm, (Xa, ya) in arms.items():
            dist = ((Xa[None, :, :] - q[:, None, :]) ** 2).sum(axis=2)
            nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
            yn = ya[nearest]
            means[arm] = yn.mean(axis=1)
            if with_variance:
                dev = yn - yn.mean(axis=1, keepdims=True)
                variances[arm] = (dev * dev).sum(axis=1)
        est[lo:lo + chunk] = means[1] - means[0]
        if with_variance:
            var[lo:lo + chunk] = (variances[0] + variances[1]) / (k * (k - 1))
    return est, var
