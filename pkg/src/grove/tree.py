"""Honest (and, for comparison, adaptive) trees grown by recursive partitioning.

A tree is stored as flat node arrays.  Internal nodes carry ``feature`` and
``threshold`` (``x[feature] <= threshold`` goes left); leaves carry the
estimation-sample statistics used for prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .core import ForestConfig, Mode
from .sampling import RandomStream, SubsampleRecord

_MODE_CODE = {
    Mode.REGRESSION_DOUBLE_SAMPLE: K.MODE_REGRESSION,
    Mode.CAUSAL_DOUBLE_SAMPLE: K.MODE_CAUSAL,
    Mode.PROPENSITY: K.MODE_PROPENSITY,
    Mode.CAUSAL_ADAPTIVE: K.MODE_ADAPTIVE,
    Mode.TRIVIAL: K.MODE_TRIVIAL,
}


class DegenerateSubsampleError(ValueError):
    """The estimation sample lacks ``min_leaf`` rows of some treatment class."""


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_treated: np.ndarray
    n_control: np.ndarray
    sum_y_treated: np.ndarray
    sum_y_control: np.ndarray
    n_total: np.ndarray
    sum_y: np.ndarray
    estimate: np.ndarray
    record: SubsampleRecord
    mode: Mode

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for t in range(self.n_nodes):
            if self.feature[t] >= 0:
                depth[self.left[t]] = depth[t] + 1
                depth[self.right[t]] = depth[t] + 1
        return int(depth.max())

    @property
    def value(self) -> np.ndarray:
        """Per-node prediction (meaningful on leaves only)."""
        return self.estimate

    def splits(self) -> list[tuple[int, float]]:
        """(feature, threshold) of every internal node in node order."""
        internal = np.flatnonzero(self.feature >= 0)
        return [(int(self.feature[t]), float(self.threshold[t])) for t in internal]

    def apply(self, xs) -> np.ndarray:
        """Leaf id for each row of ``xs``."""
        xs = np.ascontiguousarray(np.atleast_2d(np.asarray(xs, dtype=np.float64)))
        out = np.empty(xs.shape[0], dtype=np.int64)
        K.apply_tree(self.feature, self.threshold, self.left, self.right, xs, out)
        return out

    # -- serialization ----------------------------------------------------

    def to_nested(self) -> dict:
        def node(t: int) -> dict:
            if self.feature[t] >= 0:
                return {
                    "feature": int(self.feature[t]) + 1,
                    "threshold": float(self.threshold[t]),
                    "left": node(int(self.left[t])),
                    "right": node(int(self.right[t])),
                }
            return {
                "n_treated": int(self.n_treated[t]),
                "n_control": int(self.n_control[t]),
                "sum_y_treated": float(self.sum_y_treated[t]),
                "sum_y_control": float(self.sum_y_control[t]),
                "n_total": int(self.n_total[t]),
                "sum_y": float(self.sum_y[t]),
                "estimate": float(self.estimate[t]),
            }

        return {"mode": self.mode.value, "record": self.record.to_dict(), "root": node(0)}

    @classmethod
    def from_nested(cls, obj: dict) -> "Tree":
        rows: list[dict] = []
        kids: list[list[int]] = []

        stack = [(obj["root"], -1, 0)]
        while stack:
            nd, parent, side = stack.pop()
            t = len(rows)
            rows.append(nd)
            kids.append([-1, -1])
            if parent >= 0:
                kids[parent][side] = t
            if "feature" in nd:
                stack.append((nd["right"], t, 1))
                stack.append((nd["left"], t, 0))
        # growth numbers children in pairs (left, right) at split time, which
        # differs from pre-order; renumber to growth order
        order = _growth_order(kids)
        remap = np.empty(len(rows), dtype=np.int64)
        remap[order] = np.arange(len(rows))
        n = len(rows)
        arrays = {name: np.zeros(n, dtype=dt) for name, dt in _NODE_FIELDS}
        for pre, nd in enumerate(rows):
            t = remap[pre]
            if "feature" in nd:
                arrays["feature"][t] = nd["feature"] - 1
                arrays["threshold"][t] = nd["threshold"]
                arrays["left"][t] = remap[kids[pre][0]]
                arrays["right"][t] = remap[kids[pre][1]]
            else:
                arrays["feature"][t] = -1
                arrays["left"][t] = -1
                arrays["right"][t] = -1
                for name in _LEAF_FIELDS:
                    arrays[name][t] = nd[name]
        return cls(record=SubsampleRecord.from_dict(obj["record"]),
                   mode=Mode(obj["mode"]), **arrays)

    def equals(self, other: "Tree") -> bool:
        """Bit-exact structural and statistical equality."""
        return (self.mode == other.mode and self.record == other.record
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f, _ in _NODE_FIELDS))


_NODE_FIELDS = [
    ("feature", np.int64), ("threshold", np.float64),
    ("left", np.int64), ("right", np.int64),
    ("n_treated", np.int64), ("n_control", np.int64),
    ("sum_y_treated", np.float64), ("sum_y_control", np.float64),
    ("n_total", np.int64), ("sum_y", np.float64), ("estimate", np.float64),
]
_LEAF_FIELDS = ["n_treated", "n_control", "sum_y_treated", "sum_y_control", "n_total", "sum_y",
                "estimate"]


def _growth_order(kids: list[list[int]]) -> list[int]:
    """Pre-order ids listed in the order growth would have numbered them."""
    order = [0]
    stack = [0]
    while stack:
        t = stack.pop()
        l, r = kids[t]
        if l >= 0:
            order.extend([l, r])
            stack.append(r)
            stack.append(l)
    return order


# -- growth ---------------------------------------------------------------


def estimation_rows(record: SubsampleRecord) -> np.ndarray:
    return record.i_half if record.split_into_halves else record.indices


def _members(record: SubsampleRecord, mode: Mode):
    """Member rows and their roles for a given mode."""
    if mode.double_sample:
        if not record.split_into_halves:
            raise ValueError("double-sample modes need a record with I/J halves")
        rows = np.concatenate([record.i_half, record.j_half])
        role = np.concatenate([
            np.full(record.i_half.shape[0], K.EST, dtype=np.int8),
            np.full(record.j_half.shape[0], K.SPLIT, dtype=np.int8),
        ])
    else:
        rows = record.indices
        role = np.full(rows.shape[0], K.EST | K.SPLIT, dtype=np.int8)
    return rows, role


def check_estimation_classes(w: np.ndarray | None, record: SubsampleRecord, k: int) -> None:
    est = estimation_rows(record)
    if w is None:
        raise DegenerateSubsampleError("treatment indicator required")
    treated = int(w[est].sum())
    control = est.shape[0] - treated
    if treated < k or control < k:
        raise DegenerateSubsampleError(
            f"estimation sample has {treated} treated and {control} control rows; need {k} of each")


def grow_tree(data, record: SubsampleRecord, cfg: ForestConfig, stream: RandomStream) -> Tree:
    """Grow one tree on the rows named by ``record``.

    Split placement sees features, treatment labels and split-sample
    responses only; estimation-sample responses enter once the partition is
    fixed, through the leaf statistics.
    """
    mode = cfg.mode
    k = cfg.min_leaf
    if mode.needs_treatment:
        check_estimation_classes(data.w, record, k)
    rows, role = _members(record, mode)
    m = rows.shape[0]
    Xm = np.ascontiguousarray(data.X[rows])
    w_all = data.w if data.w is not None else np.zeros(data.n, dtype=np.int8)
    wm = np.ascontiguousarray(w_all[rows], dtype=np.int8)
    if mode is Mode.PROPENSITY or mode is Mode.TRIVIAL:
        y_split = np.zeros(m)
    else:
        y_split = np.where(role & K.SPLIT, data.y[rows], 0.0)

    max_nodes = 2 * m + 1
    unif = stream.random(2 * max_nodes)
    feat = np.empty(max_nodes, dtype=np.int64)
    thr = np.empty(max_nodes, dtype=np.float64)
    left = np.empty(max_nodes, dtype=np.int64)
    right = np.empty(max_nodes, dtype=np.int64)
    leaf_of = np.empty(m, dtype=np.int64)
    n_nodes = K.grow(Xm, role, y_split, wm, _MODE_CODE[mode], k, cfg.alpha, cfg.pi,
                     unif, feat, thr, left, right, leaf_of)

    est = (role & K.EST) != 0
    return Tree(
        feature=feat[:n_nodes].copy(),
        threshold=thr[:n_nodes].copy(),
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        record=record,
        mode=mode,
        **leaf_statistics(leaf_of[est], data.y[rows][est], wm[est], n_nodes, mode),
    )


def _shifted_means(leaves, y, n_nodes):
    """Per-leaf means as ``first + mean(y - first)`` over rows grouped by leaf.

    Exact whenever a leaf's responses are all equal.
    """
    count = np.bincount(leaves, minlength=n_nodes)
    ref = np.zeros(n_nodes)
    ids, first = np.unique(leaves, return_index=True)
    ref[ids] = y[first]
    dev = np.bincount(leaves, weights=y - ref[leaves], minlength=n_nodes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, ref + dev / np.maximum(count, 1), 0.0)


def leaf_statistics(leaves, y, w, n_nodes: int, mode: Mode) -> dict:
    """Leaf counts, sums and estimates from the estimation rows' leaf ids.

    Rows are put in (leaf, response) order first, so every statistic is
    independent of the order the rows arrive in.
    """
    order = np.lexsort((y, leaves))
    leaves, y, w = leaves[order], y[order], w[order]
    t_mask = w == 1
    c_mask = ~t_mask
    stats = dict(
        n_treated=np.bincount(leaves[t_mask], minlength=n_nodes),
        n_control=np.bincount(leaves[c_mask], minlength=n_nodes),
        sum_y_treated=np.bincount(leaves[t_mask], weights=y[t_mask], minlength=n_nodes),
        sum_y_control=np.bincount(leaves[c_mask], weights=y[c_mask], minlength=n_nodes),
        n_total=np.bincount(leaves, minlength=n_nodes),
        sum_y=np.bincount(leaves, weights=y, minlength=n_nodes),
    )
    if mode in (Mode.REGRESSION_DOUBLE_SAMPLE, Mode.TRIVIAL):
        stats["estimate"] = _shifted_means(leaves, y, n_nodes)
    else:
        stats["estimate"] = (_shifted_means(leaves[t_mask], y[t_mask], n_nodes)
                             - _shifted_means(leaves[c_mask], y[c_mask], n_nodes))
    return stats


def predict_tree(tree: Tree, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(tree.value[tree.apply(x)[0]])


# -- single-node split search ------------------------------------------------


@dataclass(frozen=True)
class NodeView:
    """Members of one node: features, split responses, treatment, roles.

    ``y`` must be zero wherever ``role`` lacks the SPLIT bit.
    """

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    role: np.ndarray

    @classmethod
    def build(cls, X, y, w=None, role=None) -> "NodeView":
        X = np.ascontiguousarray(X, dtype=np.float64)
        m = X.shape[0]
        w = np.zeros(m, dtype=np.int8) if w is None else np.asarray(w, dtype=np.int8)
        role = (np.full(m, K.EST | K.SPLIT, dtype=np.int8) if role is None
                else np.asarray(role, dtype=np.int8))
        y = np.where(role & K.SPLIT, np.asarray(y, dtype=np.float64), 0.0)
        return cls(X, y, w, role)


def select_split(node: NodeView, cfg: ForestConfig, stream: RandomStream):
    """``(feature, threshold)`` for this node, or None if no admissible split."""
    u = stream.random(2)
    j, t, _ = K.best_split(node.X, node.role, node.y, node.w, _MODE_CODE[cfg.mode],
                           cfg.min_leaf, cfg.alpha, cfg.pi, u[0], u[1])
    if j < 0:
        return None
    return int(j), float(t)


class SplitCandidate(NamedTuple):
    threshold: float
    score: float


def _scan(x, y, w, role, mode_code, k, min_side):
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[0]
    w = np.zeros(m, dtype=np.int8) if w is None else np.asarray(w, dtype=np.int8)
    role = (np.full(m, K.EST | K.SPLIT, dtype=np.int8) if role is None
            else np.asarray(role, dtype=np.int8))
    y = np.where(role & K.SPLIT, np.asarray(y, dtype=np.float64), 0.0)
    order = np.argsort(x, kind="mergesort")
    return K.scan_sorted(x[order], role[order], y[order], w[order], mode_code, k, min_side), y, role


def criterion_mse(x, y, k: int = 1, min_side: int = 1, role=None) -> SplitCandidate | None:
    """Threshold minimizing the within-child sum of squared deviations.

    The returned score is that sum over the split-sample responses.
    """
    (found, thr, gain), ys, role = _scan(x, y, None, role, K.MODE_REGRESSION, k, min_side)
    if not found:
        return None
    ys = ys[(role & K.SPLIT) != 0]
    sse = float(np.dot(ys, ys) - gain)
    return SplitCandidate(thr, max(sse, 0.0))


def criterion_causal(x, y, w, k: int = 1, min_side: int = 1, role=None) -> SplitCandidate | None:
    """Threshold maximizing the variance of child treatment-effect estimates
    over the split-sample rows of the node."""
    (found, thr, score), _, _ = _scan(x, y, w, role, K.MODE_CAUSAL, k, min_side)
    return SplitCandidate(thr, score) if found else None


def criterion_gini(x, w, k: int = 1, min_side: int = 1) -> SplitCandidate | None:
    """Threshold minimizing the size-weighted mean Gini impurity of ``w``."""
    x = np.asarray(x, dtype=np.float64)
    (found, thr, score), _, _ = _scan(x, np.zeros(x.shape[0]), w, None,
                                      K.MODE_PROPENSITY, k, min_side)
    return SplitCandidate(thr, -score) if found else None
