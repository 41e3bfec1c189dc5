"""
Main pipeline orchestrator for PoseForge.

This module contains the PoseEstimationPipeline class that prepares query
objects offline and, for every scene, runs feature extraction, matching,
registration and refinement on each retained candidate mask before ranking
the resulting poses.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from poseforge.core.config_loader import ModeConfig, PoseForgeConfig
from poseforge.core.errors import MASK_LEVEL_ERRORS
from poseforge.core.provenance import ProvenanceTracker
from poseforge.core.types import (
    CandidateMask,
    FeatureCloud,
    ObjectModel,
    Pose,
    SceneBundle,
    ScoredPose,
)
from poseforge.features.fusion import build_query_features, build_target_features
from poseforge.features.pca import PcaProjection
from poseforge.features.providers import DescriptorProvider, make_provider
from poseforge.geometry.views import Viewpoint, sample_template_viewpoints, template_intrinsics
from poseforge.geometry.visibility import observed_indices
from poseforge.matching.topk import topk_correspondences
from poseforge.refinement.icp import icp_refine, rescore_fine
from poseforge.registration.ransac import ransac_register, score_hypothesis


@dataclass(frozen=True, eq=False)
class QueryBundle:
    """Everything prepared offline for one query object."""

    object_id: str
    model: ObjectModel
    cloud: FeatureCloud
    pca: PcaProjection


@dataclass(frozen=True)
class SkippedMask:
    """A mask that produced no pose, and why."""

    mask_ref: int
    source_id: str
    reason: str
    message: str


@dataclass
class EstimateResult:
    """
    Ranked poses of one object in one scene.

    ``poses`` are sorted by ``s_final`` descending (ties by mask_ref).
    ``timing_ms`` sums stage times over all processed masks and
    ``mask_timing_ms`` holds the total time spent on each mask.
    """

    object_id: str
    poses: List[ScoredPose] = field(default_factory=list)
    skipped: List[SkippedMask] = field(default_factory=list)
    timing_ms: Dict[str, float] = field(default_factory=dict)
    mask_timing_ms: Dict[int, float] = field(default_factory=dict)
    shortfall: int = 0


def _rank_key(pose: ScoredPose) -> Tuple[float, int]:
    return (-pose.s_final, pose.mask_ref)


def select_mask_refs(
    scene: SceneBundle, cfg: ModeConfig, object_id: Optional[str] = None
) -> List[int]:
    """
    Indices of the masks kept by the selection policy.

    Per source, masks are ranked by confidence (input order on ties) and
    the top ``m_masks`` are kept; detection mode also drops masks below
    ``tau_mask``. The union over sources is returned without merging
    overlapping masks.
    """
    kept: List[int] = []
    for refs in scene.masks_by_source().values():
        if object_id is not None:
            refs = [i for i in refs if scene.masks[i].object_id == object_id]
        ranked = sorted(refs, key=lambda i: -scene.masks[i].confidence)
        if cfg.mode == "detection":
            ranked = [i for i in ranked if scene.masks[i].confidence >= cfg.tau_mask]
        kept.extend(ranked[: cfg.m_masks])
    return kept


def select_masks(scene: SceneBundle, cfg: ModeConfig) -> List[CandidateMask]:
    """Masks retained for processing, grouped by source."""
    return [scene.masks[i] for i in select_mask_refs(scene, cfg)]


def nms_translation(poses: Sequence[ScoredPose], radius: float) -> List[ScoredPose]:
    """
    Greedy translation NMS.

    The highest-scoring remaining pose suppresses every other pose whose
    translation is closer than ``radius``; survivors are sorted by score.
    """
    ranked = sorted(poses, key=_rank_key)
    kept: List[ScoredPose] = []
    for pose in ranked:
        if all(
            np.linalg.norm(pose.pose.translation - other.pose.translation) >= radius
            for other in kept
        ):
            kept.append(pose)
    return kept


def template_views(model: ObjectModel, config: PoseForgeConfig) -> List[Viewpoint]:
    """Template cameras around the model's bounding-box center."""
    q = config.query
    middle = 0.5 * (model.vertices.min(axis=0) + model.vertices.max(axis=0))
    return sample_template_viewpoints(
        q.n_views,
        q.view_radius_factor * model.diameter,
        template_intrinsics(q.image_size, q.fov_deg),
        target=middle,
    )


def icp_support(
    query: QueryBundle,
    pose: Pose,
    scene: SceneBundle,
    mask: CandidateMask,
    config: PoseForgeConfig,
) -> Optional[np.ndarray]:
    """
    Query points associated during ICP, or None for all of them.

    With ``icp.support = "visible"`` these are the points the scene camera
    sees inside the mask with the model at the coarse pose. Fewer than three
    such points falls back to the whole cloud.
    """
    if config.icp.support == "all":
        return None
    q = config.query
    support = observed_indices(
        query.cloud.points,
        query.model,
        pose,
        scene.intrinsics,
        mask.bitmap,
        q.splat_px,
        q.depth_tolerance,
        seed=config.seed,
    )
    return support if len(support) >= 3 else None


def _estimate_timed(
    scene: SceneBundle,
    mask: CandidateMask,
    query: QueryBundle,
    config: PoseForgeConfig,
    mask_ref: int,
    provider: Optional[DescriptorProvider] = None,
    provenance: Optional[ProvenanceTracker] = None,
) -> Tuple[ScoredPose, Dict[str, float]]:
    diameter = query.model.diameter
    timings: Dict[str, float] = {}
    clock = time.perf_counter()

    def lap(stage: str) -> None:
        nonlocal clock
        now = time.perf_counter()
        timings[stage] = (now - clock) * 1000.0
        clock = now

    target, dense = build_target_features(
        scene,
        mask,
        diameter,
        config.provider,
        config.geo,
        query.pca,
        dense_count=config.target.dense_count,
        grid=config.target.grid,
        seed=config.seed,
        mask_ref=mask_ref,
        provider=provider,
    )
    lap("features")

    k = min(config.matching.k, len(query.cloud))
    corrs = topk_correspondences(target, query.cloud, k)
    lap("matching")

    coarse = ransac_register(
        corrs, target, query.cloud, config.ransac, diameter, provenance=provenance, mask_ref=mask_ref
    )
    lap("registration")

    support = icp_support(query, coarse.pose, scene, mask, config)
    pose, s_icp = icp_refine(
        query.cloud.points, dense, coarse.pose, config.icp, diameter, support=support
    )
    tau = config.ransac.tau_inlier * diameter
    if config.weights.rank_scoring == "inlier_ratio":
        s_coarse, _ = score_hypothesis(coarse.pose, corrs, target, query.cloud, tau, "inlier_ratio")
        s_fine, _ = score_hypothesis(pose, corrs, target, query.cloud, tau, "inlier_ratio")
    else:
        s_coarse = coarse.s_coarse
        if config.ransac.scoring != "feature_aware":
            s_coarse, _ = score_hypothesis(coarse.pose, corrs, target, query.cloud, tau)
        s_fine = rescore_fine(pose, corrs, target, query.cloud, tau)
    lap("refinement")

    scored = ScoredPose.from_scores(pose, s_coarse, s_fine, s_icp, config.weights, mask_ref)
    if provenance:
        provenance.log(
            step="pipeline",
            action="mask_estimated",
            details={
                "object_id": query.object_id,
                "target_points": len(target),
                "dense_points": len(dense),
                "icp_support": len(query.cloud) if support is None else len(support),
                "correspondences": len(corrs),
                "s_coarse": scored.s_coarse,
                "s_fine": scored.s_fine,
                "s_icp": scored.s_icp,
                "s_final": scored.s_final,
            },
            duration_ms=sum(timings.values()),
            mask_ref=mask_ref,
        )
    return scored, timings


def estimate_for_mask(
    scene: SceneBundle,
    mask: CandidateMask,
    query: QueryBundle,
    config: PoseForgeConfig,
    mask_ref: int = 0,
    provenance: Optional[ProvenanceTracker] = None,
) -> ScoredPose:
    """
    Estimate and score one pose from one candidate mask.

    Runs target feature extraction, top-k matching, RANSAC, ICP and fine
    rescoring. The mask confidence never enters the score.

    Raises
    ------
    EmptyMask, NoValidDepth, ZeroVector, TooFewCorrespondences, NoValidHypothesis, NoOverlap
        When the mask cannot produce a pose; :meth:`PoseEstimationPipeline.run_scene`
        records these as skipped masks.
    """
    scored, _ = _estimate_timed(scene, mask, query, config, mask_ref, provenance=provenance)
    return scored


class PoseEstimationPipeline:
    """
    Main pipeline orchestrator for 6D pose estimation.

    Prepares query bundles offline and estimates poses for every object in
    a scene, processing candidate masks on a worker pool.
    """

    def __init__(self, config: PoseForgeConfig, provenance: Optional[ProvenanceTracker] = None):
        """
        Initialize the pipeline.

        Parameters
        ----------
        config : PoseForgeConfig
            Configuration object for this run.
        provenance : ProvenanceTracker, optional
            Provenance tracker. If not provided, a new one will be created.
        """
        self.config = config
        self.provenance = provenance or ProvenanceTracker()
        self._provider: Optional[DescriptorProvider] = None

    def prepare_query(self, model: ObjectModel, object_id: str) -> QueryBundle:
        """Sample, filter, describe and fuse the query object."""
        q = self.config.query
        with self.provenance.stage("features", "prepare_query", object_id=object_id):
            cloud, pca = build_query_features(
                model,
                self.config.provider,
                self.config.geo,
                template_views(model, self.config),
                min_views=q.min_views,
                n_points=q.n_points,
                seed=self.config.seed,
                splat_px=q.splat_px,
                depth_tolerance=q.depth_tolerance,
                provenance=self.provenance,
            )
        return QueryBundle(object_id=object_id, model=model, cloud=cloud, pca=pca)

    def estimate_for_mask(
        self, scene: SceneBundle, mask_ref: int, query: QueryBundle
    ) -> Union[Tuple[ScoredPose, Dict[str, float]], SkippedMask]:
        """Pose and stage timings for one mask, or a skipped-mask record."""
        mask = scene.masks[mask_ref]
        try:
            return _estimate_timed(
                scene,
                mask,
                query,
                self.config,
                mask_ref,
                provider=self._provider,
                provenance=self.provenance,
            )
        except MASK_LEVEL_ERRORS as e:
            skipped = SkippedMask(
                mask_ref=mask_ref,
                source_id=mask.source_id,
                reason=type(e).__name__,
                message=str(e),
            )
            self.provenance.log(
                step="pipeline",
                action="mask_skipped",
                details={"reason": skipped.reason, "message": skipped.message},
                mask_ref=mask_ref,
            )
            return skipped

    def run_scene(self, scene: SceneBundle, queries: Sequence[QueryBundle]) -> List[EstimateResult]:
        """
        Estimate poses for every query object in ``scene``.

        Parameters
        ----------
        scene : SceneBundle
            Depth, intrinsics and candidate masks.
        queries : sequence of QueryBundle
            Prepared query objects; masks are matched to objects by
            ``object_id``.

        Returns
        -------
        list of EstimateResult
            One per query, in input order. Localization keeps the best
            ``n_instances`` poses after NMS, detection keeps every survivor.
        """
        mode = self.config.mode
        self._provider = make_provider(self.config.provider)
        self.provenance.log(
            step="pipeline",
            action="start_scene",
            details={"scene_id": scene.scene_id, "masks": len(scene.masks), "mode": mode.mode},
        )

        results = []
        for query in queries:
            refs = select_mask_refs(scene, mode, query.object_id)
            self.provenance.log(
                step="pipeline",
                action="select_masks",
                details={"object_id": query.object_id, "selected": refs},
            )
            if self.config.workers > 1 and len(refs) > 1:
                with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                    outcomes = list(pool.map(lambda r: self.estimate_for_mask(scene, r, query), refs))
            else:
                outcomes = [self.estimate_for_mask(scene, r, query) for r in refs]
            results.append(self._reduce(query, refs, outcomes))
        return results

    def _reduce(self, query: QueryBundle, refs: List[int], outcomes) -> EstimateResult:
        result = EstimateResult(object_id=query.object_id)
        candidates = []
        for ref, outcome in zip(refs, outcomes):
            if isinstance(outcome, SkippedMask):
                result.skipped.append(outcome)
                continue
            scored, timings = outcome
            candidates.append(scored)
            result.mask_timing_ms[ref] = sum(timings.values())
            for stage, ms in timings.items():
                result.timing_ms[stage] = result.timing_ms.get(stage, 0.0) + ms

        mode = self.config.mode
        poses = nms_translation(candidates, mode.nms_radius * query.model.diameter)
        if mode.mode == "localization":
            result.shortfall = max(0, mode.n_instances - len(poses))
            poses = poses[: mode.n_instances]
            if result.shortfall:
                self.provenance.log(
                    step="pipeline",
                    action="nms_shortfall",
                    details={"object_id": query.object_id, "missing": result.shortfall},
                )
        result.poses = poses
        self.provenance.log(
            step="pipeline",
            action="object_complete",
            details={
                "object_id": query.object_id,
                "candidates": len(candidates),
                "kept": len(poses),
                "skipped": len(result.skipped),
            },
        )
        return result


def run_scene(
    scene: SceneBundle,
    queries: Sequence[QueryBundle],
    config: PoseForgeConfig,
    provenance: Optional[ProvenanceTracker] = None,
) -> List[EstimateResult]:
    """Functional entry point to :meth:`PoseEstimationPipeline.run_scene`."""
    return PoseEstimationPipeline(config, provenance).run_scene(scene, queries)
