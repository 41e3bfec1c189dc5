"""
Feature-aware RANSAC over top-k correspondences.

Each iteration draws three correspondences with distinct target points
from its own Philox stream, rejects geometrically inconsistent triplets,
solves the rigid transform by SVD and scores it. Iterations are processed
in fixed-size chunks, so the selected hypothesis does not depend on how
many workers score the chunks.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from poseforge.core.config_loader import RansacConfig
from poseforge.core.errors import NoValidHypothesis, TooFewCorrespondences
from poseforge.core.provenance import ProvenanceTracker
from poseforge.core.types import FeatureCloud, Pose
from poseforge.geometry.rigid import MIN_TRIANGLE_AREA, kabsch_batch, triangle_areas
from poseforge.matching.topk import Correspondence, CorrespondenceSet

_EDGES = ((0, 1), (1, 2), (0, 2))


@dataclass(frozen=True, eq=False)
class CoarseResult:
    """Best RANSAC hypothesis."""

    pose: Pose
    s_coarse: float
    inlier_count: int
    iterations_valid: int
    iteration: int = -1
    inliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _edge_lengths(tri: np.ndarray) -> np.ndarray:
    """(..., 3, 3) triangles → (..., 3) edge lengths."""
    return np.stack([np.linalg.norm(tri[..., a, :] - tri[..., b, :], axis=-1) for a, b in _EDGES], axis=-1)


def keep_triplets(
    tri_target: np.ndarray,
    tri_query: np.ndarray,
    edge_ratio_tol: float,
    max_length: float,
) -> np.ndarray:
    """Vectorized triplet pruning over (B, 3, 3) point stacks."""
    lt = _edge_lengths(tri_target)
    lq = _edge_lengths(tri_query)
    short = np.all(lt <= max_length, axis=-1) & np.all(lq <= max_length, axis=-1)
    consistent = np.all(np.abs(lt - lq) <= edge_ratio_tol * np.maximum(lt, lq), axis=-1)
    return short & consistent


def prune_triplet(
    c1: Correspondence,
    c2: Correspondence,
    c3: Correspondence,
    target_pts,
    query_pts,
    cfg: RansacConfig,
    diameter: float,
) -> bool:
    """
    Whether a correspondence triplet is geometrically consistent.

    Returns True (keep) when every edge is at most
    ``cfg.max_pair_distance * diameter`` long on both sides and every
    target edge matches its query edge within ``cfg.edge_ratio_tol``
    relative to the longer of the two.
    """
    triplet = (c1, c2, c3)
    tri_t = np.asarray(target_pts, dtype=np.float64)[[c.target_idx for c in triplet]]
    tri_q = np.asarray(query_pts, dtype=np.float64)[[c.query_idx for c in triplet]]
    return bool(
        keep_triplets(tri_t[None], tri_q[None], cfg.edge_ratio_tol, cfg.max_pair_distance * diameter)[0]
    )


class _Scorer:
    """
    Batched hypothesis scoring with one inlier per target point.

    Correspondences are reordered by (target, similarity desc, query) so
    the first inlier of every target group is its best one.
    """

    def __init__(self, corrs: CorrespondenceSet, target_pts: np.ndarray, query_pts: np.ndarray, n_targets: int):
        order = np.lexsort((corrs.query_idx, -corrs.similarity, corrs.target_idx))
        self.order = order
        self.targets = corrs.target_idx[order]
        self.sim = corrs.similarity[order]
        self.p_t = target_pts[self.targets]
        self.p_q = query_pts[corrs.query_idx[order]]
        self.starts = np.flatnonzero(np.r_[True, self.targets[1:] != self.targets[:-1]])
        self.n_targets = n_targets

    def inlier_mask(self, R: np.ndarray, t: np.ndarray, tau: float) -> np.ndarray:
        moved = np.einsum("bij,cj->bci", R, self.p_q) + t[:, None, :]
        return np.linalg.norm(moved - self.p_t[None], axis=2) < tau

    def score(self, inliers: np.ndarray, mode: str) -> Tuple[np.ndarray, np.ndarray]:
        """Scores and per-hypothesis inlier counts (one per target)."""
        any_inlier = np.logical_or.reduceat(inliers, self.starts, axis=1)
        counts = any_inlier.sum(axis=1)
        if mode == "inlier_ratio":
            return counts / self.n_targets, counts
        masked = np.where(inliers, self.sim[None, :], -np.inf)
        best = np.maximum.reduceat(masked, self.starts, axis=1)
        best = np.where(any_inlier, best, 0.0)
        return np.clip(best.sum(axis=1) / self.n_targets, 0.0, 1.0), counts

    def best_inliers(self, inliers: np.ndarray) -> np.ndarray:
        """Original correspondence indices of the best inlier per target."""
        sorted_idx = np.flatnonzero(inliers)
        if len(sorted_idx) == 0:
            return sorted_idx
        first = np.r_[True, self.targets[sorted_idx[1:]] != self.targets[sorted_idx[:-1]]]
        return np.sort(self.order[sorted_idx[first]])


def score_hypothesis(
    pose: Pose,
    correspondences: CorrespondenceSet,
    target: FeatureCloud,
    query: FeatureCloud,
    tau: float,
    mode: str = "feature_aware",
) -> Tuple[float, np.ndarray]:
    """
    Score one pose against the correspondences.

    Parameters
    ----------
    pose : Pose
        Query-to-target transform.
    correspondences : CorrespondenceSet
        Matches between ``target`` and ``query``.
    target, query : FeatureCloud
        The sparse target and the query cloud.
    tau : float
        Inlier distance in meters.
    mode : {"feature_aware", "inlier_ratio"}
        Sum of inlier cosines over ``len(target)``, or the fraction of
        target points with an inlier.

    Returns
    -------
    score : float
        In [0, 1].
    inliers : ndarray
        Indices into ``correspondences`` of the best inlier of each target
        point that has one.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if len(correspondences) == 0:
        return 0.0, np.zeros(0, dtype=np.int64)
    scorer = _Scorer(correspondences, target.points, query.points, len(target))
    mask = scorer.inlier_mask(pose.rotation[None], pose.translation[None], tau)
    scores, _ = scorer.score(mask, mode)
    return float(scores[0]), scorer.best_inliers(mask[0])


def _draw(bits: np.ndarray, sizes: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Three correspondence indices with distinct target groups from six raw draws."""
    n_groups = len(sizes)
    groups: List[int] = []
    for j in range(3):
        g = int(bits[j] % np.uint64(n_groups - j))
        for taken in sorted(groups):
            if g >= taken:
                g += 1
        groups.append(g)
    return np.array(
        [offsets[g] + int(bits[3 + j] % np.uint64(sizes[g])) for j, g in enumerate(groups)],
        dtype=np.int64,
    )


def sample_triplets(
    seed: int, start: int, stop: int, sizes: np.ndarray, offsets: np.ndarray
) -> np.ndarray:
    """
    (stop - start, 3) triplets for iterations ``start .. stop-1``.

    Iteration ``i`` reads its draws from a Philox stream keyed by ``seed``
    at counter ``i · 2⁶⁴``, independent of every other iteration.
    """
    out = np.empty((stop - start, 3), dtype=np.int64)
    for row, i in enumerate(range(start, stop)):
        bits = np.random.Philox(key=seed, counter=[0, i, 0, 0]).random_raw(6)
        out[row] = _draw(bits, sizes, offsets)
    return out


def ransac_register(
    correspondences: CorrespondenceSet,
    target: FeatureCloud,
    query: FeatureCloud,
    cfg: RansacConfig,
    diameter: float,
    workers: int = 1,
    provenance: Optional[ProvenanceTracker] = None,
    mask_ref: Optional[int] = None,
) -> CoarseResult:
    """
    Coarse query-to-target pose by RANSAC.

    Parameters
    ----------
    correspondences : CorrespondenceSet
        Top-k matches.
    target, query : FeatureCloud
        Sparse target cloud and query cloud.
    cfg : RansacConfig
        Iterations, thresholds (fractions of ``diameter``), scoring mode
        and seed.
    diameter : float
        Object diameter in meters.
    workers : int
        Threads scoring chunks of iterations; never changes the result.

    Returns
    -------
    CoarseResult
        Highest-scoring hypothesis, earliest iteration on ties.

    Raises
    ------
    TooFewCorrespondences
        If fewer than three distinct target points are matched.
    NoValidHypothesis
        If every sampled triplet was pruned or degenerate.
    """
    if len(correspondences) < 3 or correspondences.n_targets < 3:
        raise TooFewCorrespondences(
            f"{len(correspondences)} correspondences over {correspondences.n_targets} target points"
        )

    scorer = _Scorer(correspondences, target.points, query.points, len(target))
    _, offsets, sizes = np.unique(scorer.targets, return_index=True, return_counts=True)
    tau = cfg.tau_inlier * diameter
    max_length = cfg.max_pair_distance * diameter

    def run_chunk(start: int):
        stop = min(start + cfg.chunk_size, cfg.iterations)
        picks = sample_triplets(cfg.seed, start, stop, sizes, offsets)
        tri_t = scorer.p_t[picks]
        tri_q = scorer.p_q[picks]
        valid = keep_triplets(tri_t, tri_q, cfg.edge_ratio_tol, max_length)
        valid &= triangle_areas(tri_q) > MIN_TRIANGLE_AREA
        valid &= triangle_areas(tri_t) > MIN_TRIANGLE_AREA
        idx = np.flatnonzero(valid)
        if len(idx) == 0:
            return 0, None
        R, t = kabsch_batch(tri_q[idx], tri_t[idx])
        scores, counts = scorer.score(scorer.inlier_mask(R, t, tau), cfg.scoring)
        b = int(np.argmax(scores))
        return len(idx), (float(scores[b]), start + int(idx[b]), R[b], t[b], int(counts[b]))

    starts = range(0, cfg.iterations, cfg.chunk_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, starts))
    else:
        results = [run_chunk(s) for s in starts]

    n_valid = sum(r[0] for r in results)
    candidates = [r[1] for r in results if r[1] is not None]
    if not candidates:
        raise NoValidHypothesis(f"All {cfg.iterations} sampled triplets were pruned or degenerate")
    score, iteration, R, t, count = min(candidates, key=lambda c: (-c[0], c[1]))

    pose = Pose(R, t)
    inliers = scorer.best_inliers(scorer.inlier_mask(R[None], t[None], tau)[0])
    if provenance:
        provenance.log(
            step="registration",
            action="ransac",
            details={
                "iterations": cfg.iterations,
                "valid": n_valid,
                "best_iteration": iteration,
                "score": score,
                "inliers": count,
                "scoring": cfg.scoring,
            },
            mask_ref=mask_ref,
        )
    return CoarseResult(
        pose=pose,
        s_coarse=score,
        inlier_count=count,
        iterations_valid=n_valid,
        iteration=iteration,
        inliers=inliers,
    )
