"""Seed-derived random streams, subsampling and I/J half splits.

Every tree owns a Philox4x64-10 stream keyed by ``(seed, tree_index)`` with
the counter starting at zero.  Philox is counter based, so the raw output is
fixed by the key alone and identical on every platform; see
``tests/test_sampling.py`` for the Random123 known-answer vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

RandomStream = np.random.Generator

_MASK64 = (1 << 64) - 1


def derive_stream(seed: int, tree_index: int) -> RandomStream:
    """Independent deterministic stream for tree ``tree_index``."""
    key = np.array([seed & _MASK64, tree_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@njit(cache=True)
def _partial_shuffle(pool, draws):
    for i in range(draws.shape[0]):
        j = draws[i]
        tmp = pool[i]
        pool[i] = pool[j]
        pool[j] = tmp


def _shuffle_prefix(stream: RandomStream, pool: np.ndarray, s: int) -> None:
    # Fisher-Yates restricted to the first s slots: O(s) draws
    n = pool.shape[0]
    draws = stream.integers(np.arange(s), n, dtype=np.int64)
    _partial_shuffle(pool, draws)


def draw_subsample(stream: RandomStream, n: int, s: int) -> np.ndarray:
    """Uniform size-``s`` subset of ``range(n)``, returned sorted."""
    if not (1 <= s <= n):
        raise ValueError(f"subsample size must satisfy 1 <= s <= n, got s={s}, n={n}")
    pool = np.arange(n, dtype=np.int64)
    _shuffle_prefix(stream, pool, s)
    return np.sort(pool[:s])


def split_halves(stream: RandomStream, indices) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random partition into halves of size floor(s/2) and ceil(s/2)."""
    pool = np.array(indices, dtype=np.int64)
    s = pool.shape[0]
    if s < 2:
        raise ValueError("need at least 2 indices to split into halves")
    _shuffle_prefix(stream, pool, s)
    half = s // 2
    return np.sort(pool[:half]), np.sort(pool[half:])


@dataclass(frozen=True)
class SubsampleRecord:
    """Which training rows a tree saw.

    ``i_half`` holds the estimation rows and ``j_half`` the split-placement
    rows; both are empty when the whole subsample plays both roles.
    """

    tree_index: int
    indices: np.ndarray
    i_half: np.ndarray
    j_half: np.ndarray

    @property
    def s(self) -> int:
        return int(self.indices.shape[0])

    @property
    def split_into_halves(self) -> bool:
        return self.i_half.shape[0] > 0

    def membership(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        out[self.indices] = True
        return out

    def to_dict(self) -> dict:
        return {
            "tree_index": self.tree_index,
            "indices": self.indices.tolist(),
            "i_half": self.i_half.tolist(),
            "j_half": self.j_half.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SubsampleRecord":
        return cls(
            int(obj["tree_index"]),
            np.asarray(obj["indices"], dtype=np.int64),
            np.asarray(obj["i_half"], dtype=np.int64),
            np.asarray(obj["j_half"], dtype=np.int64),
        )

    def __eq__(self, other):
        if not isinstance(other, SubsampleRecord):
            return NotImplemented
        return (self.tree_index == other.tree_index
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.i_half, other.i_half)
                and np.array_equal(self.j_half, other.j_half))


_EMPTY = np.zeros(0, dtype=np.int64)


def make_record(stream: RandomStream, tree_index: int, n: int, s: int,
                halves: bool) -> SubsampleRecord:
    indices = draw_subsample(stream, n, s)
    if halves:
        i_half, j_half = split_halves(stream, indices)
    else:
        i_half, j_half = _EMPTY, _EMPTY
    return SubsampleRecord(tree_index, indices, i_half, j_half)
