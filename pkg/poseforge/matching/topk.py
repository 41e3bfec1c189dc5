"""
Top-k cosine matching from target points to query points.

Search is an exact blocked scan: both descriptor sets are normalized to
unit length and compared by dot product, then every target row is ranked
with a stable sort so equal similarities keep the smaller query index first.
"""

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from poseforge.core.errors import DimMismatch, ZeroVector
from poseforge.core.types import FeatureCloud

BLOCK_ROWS = 256


class Correspondence(NamedTuple):
    """One target-to-query match."""

    target_idx: int
    query_idx: int
    similarity: float


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """
    Correspondences stored column-wise.

    Rows are grouped by target index (ascending) and, within a group,
    ordered by descending similarity.
    """

    target_idx: np.ndarray
    query_idx: np.ndarray
    similarity: np.ndarray

    def __post_init__(self):
        t = np.array(self.target_idx, dtype=np.int64)
        q = np.array(self.query_idx, dtype=np.int64)
        s = np.array(self.similarity, dtype=np.float64)
        if not (t.shape == q.shape == s.shape) or t.ndim != 1:
            raise ValueError("Correspondence columns must be 1-D and of equal length")
        if not np.all(np.isfinite(s)):
            raise ValueError("Correspondence similarities must be finite")
        for a in (t, q, s):
            a.setflags(write=False)
        object.__setattr__(self, "target_idx", t)
        object.__setattr__(self, "query_idx", q)
        object.__setattr__(self, "similarity", s)

    @classmethod
    def from_list(cls, items) -> "CorrespondenceSet":
        items = list(items)
        if not items:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0))
        t, q, s = zip(*items)
        return cls(np.array(t), np.array(q), np.array(s))

    def __len__(self) -> int:
        return len(self.target_idx)

    def __iter__(self) -> Iterator[Correspondence]:
        for t, q, s in zip(self.target_idx, self.query_idx, self.similarity):
            yield Correspondence(int(t), int(q), float(s))

    def __getitem__(self, i: int) -> Correspondence:
        return Correspondence(
            int(self.target_idx[i]), int(self.query_idx[i]), float(self.similarity[i])
        )

    def to_list(self):
        return list(self)

    @property
    def n_targets(self) -> int:
        """Number of distinct target points."""
        return len(np.unique(self.target_idx))


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector(f"{what} cloud contains a zero descriptor")
    return x / norms


def topk_correspondences(target: FeatureCloud, query: FeatureCloud, k: int) -> CorrespondenceSet:
    """
    The ``k`` most similar query points of every target point.

    Parameters
    ----------
    target : FeatureCloud
        Sparse scene cloud.
    query : FeatureCloud
        Dense model cloud.
    k : int
        Matches per target point, ``1 <= k <= len(query)``.

    Returns
    -------
    CorrespondenceSet
        ``len(target) * k`` correspondences, grouped by target index with
        similarities non-increasing inside each group.

    Raises
    ------
    DimMismatch
        If the descriptor dimensions differ.
    """
    if target.dim != query.dim:
        raise DimMismatch(f"target dim {target.dim} != query dim {query.dim}")
    if not 1 <= k <= len(query):
        raise ValueError(f"k must lie in [1, {len(query)}], got {k}")

    t_unit = _unit_rows(target.descriptors, "target")
    q_unit = _unit_rows(query.descriptors, "query")

    n_t = len(target)
    query_idx = np.empty((n_t, k), dtype=np.int64)
    similarity = np.empty((n_t, k))
    for start in range(0, n_t, BLOCK_ROWS):
        sims = t_unit[start : start + BLOCK_ROWS] @ q_unit.T
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        query_idx[start : start + BLOCK_ROWS] = order
        similarity[start : start + BLOCK_ROWS] = np.take_along_axis(sims, order, axis=1)

    return CorrespondenceSet(
        target_idx=np.repeat(np.arange(n_t), k),
        query_idx=query_idx.ravel(),
        similarity=np.clip(similarity.ravel(), -1.0, 1.0),
    )
