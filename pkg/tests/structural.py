"""Audits of grown trees, shared by the tree tests and the acceptance suite."""

from __future__ import annotations

import copy
import math

import numpy as np

from grove.core import Dataset, Mode
from grove.sampling import derive_stream, make_record
from grove.tree import DegenerateSubsampleError, estimation_rows, grow_tree

from oracles import ceil_fraction, node_estimation_counts


def grow_pair(data: Dataset, cfg, b: int, permute_seed: int):
    """Grow tree ``b`` twice: on ``data`` and on a copy with shuffled responses.

    Double-sample modes shuffle the estimation-half responses; propensity
    mode shuffles every response.  Both growths see the same record and the
    same stream state.  Returns None if the record is degenerate.
    """
    stream = derive_stream(cfg.seed, b)
    record = make_record(stream, b, data.n, cfg.subsample_size, cfg.mode.double_sample)
    twin = copy.deepcopy(stream)
    try:
        tree = grow_tree(data, record, cfg, stream)
    except DegenerateSubsampleError:
        return None
    rows = record.i_half if cfg.mode.double_sample else record.indices
    y = data.y.copy()
    y[rows] = y[np.random.default_rng(permute_seed).permutation(rows)]
    shuffled = Dataset(data.X, y, data.w)
    return tree, grow_tree(shuffled, record, cfg, twin)


def regularity_violations(tree, data: Dataset, alpha: float) -> list[int]:
    """Internal nodes where a child holds fewer than ceil(alpha*m) estimation rows."""
    est = estimation_rows(tree.record)
    total, _ = node_estimation_counts(tree, data.X[est])
    bad = []
    for t in np.flatnonzero(tree.feature >= 0):
        need = ceil_fraction(alpha, int(total[t]))
        if min(total[tree.left[t]], total[tree.right[t]]) < need:
            bad.append(int(t))
    return bad


def leaf_violations(tree, data: Dataset, k: int) -> list[int]:
    """Leaves whose estimation counts break the per-mode bounds.

    Counts are recomputed by routing rows, then compared with the stored
    statistics as well.
    """
    est = estimation_rows(tree.record)
    w = data.w[est] if data.w is not None else None
    total, treated = node_estimation_counts(tree, data.X[est], w)
    bad = []
    for t in np.flatnonzero(tree.feature < 0):
        stored_ok = tree.n_total[t] == total[t]
        if w is not None:
            stored_ok &= tree.n_treated[t] == treated[t]
        if tree.mode is Mode.REGRESSION_DOUBLE_SAMPLE:
            ok = k <= total[t] <= 2 * k - 1
        else:
            ok = treated[t] >= k and total[t] - treated[t] >= k
        if not (ok and stored_ok):
            bad.append(int(t))
    return bad


def pooled_z(hits, floors) -> float:
    """z-score of a count of Bernoulli hits against per-trial floor rates."""
    hits = np.asarray(hits, dtype=float)
    floors = np.asarray(floors, dtype=float)
    sd = math.sqrt(float(np.sum(floors * (1 - floors))))
    return float((hits.sum() - floors.sum()) / sd)
