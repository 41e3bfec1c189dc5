"""
Point-to-point ICP and the scores computed after it.

Association is query → dense target by exact nearest neighbour search over
every supporting query point, with no distance cutoff. Every update solves
Kabsch from the original query points, and an update is only accepted when
it does not raise the mean closest-point distance, so the residual sequence
is non-increasing. ``tau_icp`` only enters the final inlier score.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from poseforge.core.config_loader import IcpConfig, ScoreWeights
from poseforge.core.errors import DegenerateTriplet, NoOverlap
from poseforge.core.types import FeatureCloud, Pose
from poseforge.geometry.rigid import kabsch
from poseforge.matching.topk import CorrespondenceSet
from poseforge.registration.ransac import score_hypothesis


@dataclass(frozen=True, eq=False)
class IcpTrace:
    """Refined pose, its score and the accepted residual history."""

    pose: Pose
    s_icp: float
    iterations: int
    residuals: List[float] = field(default_factory=list)
    converged: bool = False
    support: Optional[np.ndarray] = None


def _support_points(query_pts: np.ndarray, support) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if support is None:
        return query_pts, None
    support = np.asarray(support, dtype=np.int64).reshape(-1)
    if support.size and (support.min() < 0 or support.max() >= len(query_pts)):
        raise IndexError("support indices out of range of the query points")
    return query_pts[support], support


def run_icp(
    query_pts,
    dense_target,
    init: Pose,
    cfg: IcpConfig,
    diameter: float,
    support=None,
) -> IcpTrace:
    """
    ICP with its residual trace.

    ``support`` restricts association to a subset of the query points (for
    instance those facing the camera at ``init``); the inlier score is
    always taken over all of them.

    Raises
    ------
    NoOverlap
        If no supporting point is within ``tau_icp`` of the target at the
        initial pose nor after the first update.
    """
    query_pts = np.asarray(query_pts, dtype=np.float64)
    dense_target = np.asarray(dense_target, dtype=np.float64)
    moving, support = _support_points(query_pts, support)
    if len(moving) < 3 or len(dense_target) < 3:
        raise ValueError(
            f"ICP needs at least 3 points on each side, got {len(moving)} and {len(dense_target)}"
        )

    tau = cfg.tau_icp * diameter
    eps = cfg.convergence_eps * diameter
    tree = cKDTree(dense_target)

    pose = init
    dist, nn = tree.query(pose.apply(moving))
    residuals = [float(dist.mean())]
    overlap_at_init = bool(np.any(dist < tau))
    converged = False
    iterations = 0

    for it in range(cfg.max_iterations):
        try:
            candidate = kabsch(moving, dense_target[nn])
        except DegenerateTriplet:
            break
        cand_dist, cand_nn = tree.query(candidate.apply(moving))
        if it == 0 and not overlap_at_init and not np.any(cand_dist < tau):
            raise NoOverlap("No query point within tau_icp of the target before or after one update")

        residual = float(cand_dist.mean())
        if residual > residuals[-1]:
            break
        iterations += 1
        change = residuals[-1] - residual
        pose, dist, nn = candidate, cand_dist, cand_nn
        residuals.append(residual)
        if change < eps:
            converged = True
            break

    final_dist, _ = tree.query(pose.apply(query_pts))
    s_icp = float(np.count_nonzero(final_dist < tau)) / len(query_pts)
    return IcpTrace(
        pose=pose,
        s_icp=s_icp,
        iterations=iterations,
        residuals=residuals,
        converged=converged,
        support=support,
    )


def icp_refine(
    query_pts,
    dense_target,
    init: Pose,
    cfg: IcpConfig,
    diameter: float,
    support=None,
) -> Tuple[Pose, float]:
    """
    Refine ``init`` by point-to-point ICP.

    Parameters
    ----------
    query_pts : array-like
        (N, 3) model-frame query points.
    dense_target : array-like
        (M, 3) camera-frame dense target points.
    init : Pose
        Coarse model-to-camera pose.
    cfg : IcpConfig
        Iteration cap, inlier distance and convergence threshold, the
        distances as fractions of ``diameter``.
    diameter : float
        Object diameter in meters.
    support : array-like of int, optional
        Indices of the query points used for association; all by default.

    Returns
    -------
    (Pose, float)
        Refined pose and the fraction of all N query points within
        ``tau_icp`` of their nearest target point.
    """
    trace = run_icp(query_pts, dense_target, init, cfg, diameter, support=support)
    return trace.pose, trace.s_icp


def rescore_fine(
    pose: Pose,
    correspondences: CorrespondenceSet,
    target: FeatureCloud,
    query: FeatureCloud,
    tau: float,
) -> float:
    """Feature-aware score of the refined pose over the same correspondences."""
    score, _ = score_hypothesis(pose, correspondences, target, query, tau, mode="feature_aware")
    return score


def final_score(s_coarse: float, s_fine: float, s_icp: float, w: Optional[ScoreWeights] = None) -> float:
    """
    ``s_coarse^α · s_fine^β · s_icp^γ``.

    A zero exponent disables its term (``0^0 = 1``).
    """
    w = w or ScoreWeights()
    return float(
        float(s_coarse) ** w.alpha * float(s_fine) ** w.beta * float(s_icp) ** w.gamma
    )
