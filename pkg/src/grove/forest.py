"""Subsampled forests: training, averaging and JSON persistence."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels as K
from .core import Dataset, ForestConfig, as_points, validate_config
from .sampling import derive_stream, make_record
from .tree import DegenerateSubsampleError, Tree, grow_tree

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_REDRAWS = 100


class TrainingError(RuntimeError):
    pass


class Forest:
    """An ensemble of trees plus the config and training size that made it."""

    def __init__(self, trees: list[Tree], config: ForestConfig, n_train: int, d: int):
        self.trees = list(trees)
        self.config = config
        self.n_train = n_train
        self.d = d

    def __len__(self):
        return len(self.trees)

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def _packed(self):
        sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
        offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        return (
            np.concatenate([t.feature for t in self.trees]),
            np.concatenate([t.threshold for t in self.trees]),
            np.concatenate([t.left for t in self.trees]),
            np.concatenate([t.right for t in self.trees]),
            np.concatenate([t.value for t in self.trees]),
            offsets,
        )

    @cached_property
    def membership(self) -> np.ndarray:
        """(B, n) float matrix; entry (b, i) is 1 if row i was in tree b's subsample."""
        out = np.zeros((len(self.trees), self.n_train))
        for b, tree in enumerate(self.trees):
            out[b, tree.record.indices] = 1.0
        return out

    def tree_predictions(self, xs) -> np.ndarray:
        """(B, q) matrix of per-tree predictions."""
        pts = as_points(xs, self.d)
        out = np.empty((len(self.trees), pts.shape[0]))
        feat, thr, left, right, value, offsets = self._packed
        K.predict_packed(feat, thr, left, right, value, offsets, pts, out)
        return out

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "n_train": self.n_train,
            "d": self.d,
            "trees": [t.to_nested() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Forest":
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {obj.get('version')!r}")
        trees = [Tree.from_nested(t) for t in obj["trees"]]
        return cls(trees, ForestConfig.from_dict(obj["config"]), int(obj["n_train"]), int(obj["d"]))

    def equals(self, other: "Forest") -> bool:
        return (self.config == other.config and self.n_train == other.n_train
                and len(self) == len(other)
                and all(a.equals(b) for a, b in zip(self.trees, other.trees)))


def _grow_one(data: Dataset, cfg: ForestConfig, b: int) -> Tree:
    stream = derive_stream(cfg.seed, b)
    halves = cfg.mode.double_sample
    for _ in range(MAX_REDRAWS + 1):
        record = make_record(stream, b, data.n, cfg.subsample_size, halves)
        try:
            return grow_tree(data, record, cfg, stream)
        except DegenerateSubsampleError:
            continue
    raise TrainingError(
        f"tree {b}: no subsample with {cfg.min_leaf} rows of each treatment class "
        f"after {MAX_REDRAWS} redraws")


def train(data: Dataset, cfg: ForestConfig, n_jobs: int = 1) -> Forest:
    """Grow ``B`` trees, tree ``b`` from the stream keyed by ``(cfg.seed, b)``.

    The result does not depend on ``n_jobs``: every tree owns its stream and
    trees are gathered in index order.
    """
    validate_config(cfg, data)
    B = cfg.trees_for(data.n)
    if n_jobs <= 1:
        trees = [_grow_one(data, cfg, b) for b in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(lambda b: _grow_one(data, cfg, b), range(B)))
    logger.debug("trained %d trees (mode=%s, s=%d)", B, cfg.mode.value, cfg.subsample_size)
    return Forest(trees, cfg, data.n, data.d)


def forest_average(P: np.ndarray) -> np.ndarray:
    """Column means of a (B, q) tree-prediction matrix.

    Deviations from the first tree are summed in tree-index order, so equal
    predictions average to exactly that value.
    """
    return P[0] + (P - P[0]).sum(axis=0) / P.shape[0]


def predict(forest: Forest, x) -> float:
    """Average of the tree predictions at a single point."""
    return float(predict_batch(forest, [x])[0])


def predict_batch(forest: Forest, xs) -> list[float]:
    pts = as_points(xs, forest.d)
    if pts.shape[0] == 0:
        return []
    P = forest.tree_predictions(pts)
    return forest_average(P).tolist()


def save_forest(forest: Forest, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(forest.to_dict(), fh)


def load_forest(path: str | Path) -> Forest:
    with open(path) as fh:
        return Forest.from_dict(json.load(fh))
