"""
Fused descriptors for the query model and for scene targets.

A fused descriptor is ``[norm(PCA(f_vis)), norm(f_geo)]``: the visual half
is projected to the geometric width so both modalities weigh the same, and
each half is L2-normalized on its own.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from poseforge.core.config_loader import DescriptorProviderSpec, GeoScaleConfig
from poseforge.core.errors import DimMismatch, NoValidDepth, ZeroVector
from poseforge.core.provenance import ProvenanceTracker
from poseforge.core.types import CandidateMask, FeatureCloud, ObjectModel, SceneBundle
from poseforge.features.pca import PcaProjection, fit_pca
from poseforge.features.providers import (
    DescriptorProvider,
    GeometricRequest,
    VisualRequest,
    make_provider,
)
from poseforge.geometry.camera import backproject, grid_patch_centers, mask_pixels
from poseforge.geometry.sampling import poisson_disk_sample
from poseforge.geometry.views import Viewpoint
from poseforge.geometry.visibility import visibility_matrix, visible_indices

ZERO_NORM = 1e-12


def _normalize_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    bad = np.flatnonzero(norms[:, 0] < ZERO_NORM)
    if len(bad):
        raise ZeroVector(f"{len(bad)} {what} descriptor(s) with zero norm (first at row {bad[0]})")
    return x / norms


def fuse_batch(f_vis, f_geo, pca: PcaProjection) -> np.ndarray:
    """
    Fuse (M, D_vis) visual and (M, D_geo) geometric descriptors row by row.

    Raises
    ------
    DimMismatch
        If the PCA output width differs from D_geo or the row counts differ.
    ZeroVector
        If any half has norm below 1e-12.
    """
    f_vis = np.atleast_2d(np.asarray(f_vis, dtype=np.float64))
    f_geo = np.atleast_2d(np.asarray(f_geo, dtype=np.float64))
    if f_vis.shape[1] != pca.d_in:
        raise DimMismatch(f"visual dim {f_vis.shape[1]}, PCA expects {pca.d_in}")
    if f_geo.shape[1] != pca.d_out:
        raise DimMismatch(f"geometric dim {f_geo.shape[1]} != PCA output dim {pca.d_out}")
    if len(f_vis) != len(f_geo):
        raise DimMismatch(f"{len(f_vis)} visual rows, {len(f_geo)} geometric rows")
    vis = _normalize_rows(pca.project(f_vis), "visual")
    geo = _normalize_rows(f_geo, "geometric")
    return np.hstack([vis, geo])


def fuse(f_vis, f_geo, pca: PcaProjection) -> np.ndarray:
    """
    Fuse a single visual / geometric descriptor pair.

    Parameters
    ----------
    f_vis : array-like
        (D_vis,) visual descriptor.
    f_geo : array-like
        (D_geo,) geometric descriptor.
    pca : PcaProjection
        Projection with ``d_out == D_geo``.

    Returns
    -------
    ndarray
        (2·D_geo,) descriptor whose halves both have unit norm.
    """
    return fuse_batch(np.reshape(f_vis, (1, -1)), np.reshape(f_geo, (1, -1)), pca)[0]


def view_weights(
    points: np.ndarray, normals: np.ndarray, views: Sequence[Viewpoint], visible: np.ndarray
) -> np.ndarray:
    """
    (V, N) aggregation weights: cosine between the surface normal and the
    direction to the camera, clamped at 0, zero where the point is hidden.

    Points whose visible views all have non-positive cosine fall back to
    equal weights over those views.
    """
    centers = np.stack([v.center for v in views])
    to_cam = centers[:, None, :] - points[None, :, :]
    to_cam /= np.linalg.norm(to_cam, axis=2, keepdims=True)
    weights = np.clip(np.einsum("vni,ni->vn", to_cam, normals), 0.0, None) * visible
    empty = weights.sum(axis=0) <= 0
    weights[:, empty] = visible[:, empty].astype(np.float64)
    return weights


def aggregate_visual(
    provider: DescriptorProvider,
    points: np.ndarray,
    support: np.ndarray,
    indices: np.ndarray,
    diameter: float,
    views: Sequence[Viewpoint],
    weights: np.ndarray,
) -> np.ndarray:
    """Weighted average of per-view visual descriptors."""
    if not provider.view_dependent:
        return provider.describe_visual(
            VisualRequest(points=points, diameter=diameter, support=support, indices=indices)
        )
    total = None
    for v, view in enumerate(views):
        seen = weights[v] > 0
        if not np.any(seen):
            continue
        cam = view.pose.apply(points[seen])
        desc = provider.describe_visual(
            VisualRequest(
                points=points[seen],
                diameter=diameter,
                support=support,
                indices=indices[seen],
                pixels=view.intrinsics.project(cam),
                view_index=v,
            )
        )
        if total is None:
            total = np.zeros((len(points), desc.shape[1]))
        total[seen] += weights[v, seen, None] * desc
    return total / weights.sum(axis=0)[:, None]


def build_query_features(
    model: ObjectModel,
    spec: DescriptorProviderSpec,
    geo: GeoScaleConfig,
    views: Sequence[Viewpoint],
    min_views: int,
    n_points: int,
    seed: int = 0,
    splat_px: int = 3,
    depth_tolerance: float = 0.01,
    provenance: Optional[ProvenanceTracker] = None,
) -> Tuple[FeatureCloud, PcaProjection]:
    """
    Fused descriptor cloud of the query object, computed once offline.

    Parameters
    ----------
    model : ObjectModel
        Query object.
    spec : DescriptorProviderSpec
        Descriptor provider.
    geo : GeoScaleConfig
        Geometric descriptor scales; ``geo.total_dim`` is also the PCA width.
    views : sequence of Viewpoint
        Template cameras for visibility and visual aggregation.
    min_views : int
        Views in which a point must be visible to be kept.
    n_points : int
        Poisson-disk samples drawn before visibility filtering.
    seed : int
        Sampling seed.
    splat_px, depth_tolerance
        Visibility z-buffer settings.
    provenance : ProvenanceTracker, optional
        Receives sampling, visibility and PCA entries.

    Returns
    -------
    (FeatureCloud, PcaProjection)
        The model-frame fused cloud and the projection fitted on its visual
        descriptors, to be reused for every target.

    Raises
    ------
    EmptyResult
        If no sample is visible in ``min_views`` views.
    """
    provider = make_provider(spec)
    raw, faces = poisson_disk_sample(model, n_points, seed=seed, return_faces=True)
    visible = visibility_matrix(raw, model, views, splat_px, depth_tolerance, seed=seed)
    kept = visible_indices(visible, min_views)
    points = raw[kept]
    if provenance:
        provenance.log(
            step="features",
            action="query_sampling",
            details={"sampled": len(raw), "visible": len(kept), "views": len(views)},
        )

    normals = model.face_normals()[faces[kept]]
    weights = view_weights(points, normals, views, visible[:, kept])
    f_vis = aggregate_visual(provider, points, raw, kept, model.diameter, views, weights)
    f_geo = provider.describe_geometric(
        GeometricRequest(
            points=points,
            support=raw,
            diameter=model.diameter,
            radii=geo.radii,
            dims=geo.dims,
            indices=kept,
        )
    )

    pca = fit_pca(f_vis, geo.total_dim, provenance=provenance)
    cloud = FeatureCloud(points=points, descriptors=fuse_batch(f_vis, f_geo, pca))
    if provenance:
        provenance.log(
            step="features",
            action="query_features",
            details={"points": len(cloud), "dim": cloud.dim, "provider": spec.kind},
        )
    return cloud, pca


def subsample_dense(points: np.ndarray, count: int, seed: int) -> np.ndarray:
    """Uniform random subset of at most ``count`` points, kept in input order."""
    if len(points) <= count:
        return points
    rng = np.random.default_rng(seed)
    return points[np.sort(rng.choice(len(points), size=count, replace=False))]


def build_target_features(
    scene: SceneBundle,
    mask: CandidateMask,
    model_diameter: float,
    spec: DescriptorProviderSpec,
    geo: GeoScaleConfig,
    pca: PcaProjection,
    dense_count: int = 3000,
    grid: int = 16,
    seed: int = 0,
    mask_ref: Optional[int] = None,
    provider: Optional[DescriptorProvider] = None,
) -> Tuple[FeatureCloud, np.ndarray]:
    """
    Sparse fused target cloud and dense point cloud of one candidate mask.

    Parameters
    ----------
    scene : SceneBundle
        Depth image and intrinsics.
    mask : CandidateMask
        The instance hypothesis.
    model_diameter : float
        Diameter of the query object; sets the descriptor radii.
    spec, geo, pca
        Provider, geometric scales and the query-fitted PCA.
    dense_count : int
        Maximum size of the dense cloud.
    grid : int
        Patch lattice size per side.
    seed : int
        Seed of the dense subsampling.
    mask_ref : int, optional
        Index of the mask in the scene, used to look up precomputed
        descriptors.
    provider : DescriptorProvider, optional
        Pre-built provider; built from ``spec`` when omitted.

    Returns
    -------
    sparse : FeatureCloud
        Camera-frame patch-center points with fused descriptors.
    dense : ndarray
        (≤ dense_count, 3) camera-frame points.

    Raises
    ------
    EmptyMask
        If the mask has no pixel.
    NoValidDepth
        If no patch center or no masked pixel has valid depth.
    """
    centers = grid_patch_centers(mask, grid)
    dense_all, _ = backproject(scene.depth, scene.intrinsics, mask_pixels(mask))
    if len(dense_all) == 0:
        raise NoValidDepth(f"Mask {mask_ref} has no pixel with valid depth")
    dense = subsample_dense(dense_all, dense_count, seed)

    if mask_ref is not None and mask_ref in scene.precomputed_target_features:
        from poseforge.io.feature_files import load_feature_cloud

        sparse = load_feature_cloud(
            scene.precomputed_target_features[mask_ref], expected_dim=2 * pca.d_out
        )
        return sparse, dense

    sparse_pts, dropped = backproject(scene.depth, scene.intrinsics, centers)
    if len(sparse_pts) == 0:
        raise NoValidDepth(f"No patch center of mask {mask_ref} has valid depth")
    patch_idx = np.setdiff1d(np.arange(len(centers)), dropped)

    provider = provider or make_provider(spec)
    f_vis = provider.describe_visual(
        VisualRequest(
            points=sparse_pts,
            diameter=model_diameter,
            frame="camera",
            support=dense,
            indices=patch_idx,
            pixels=centers[patch_idx].astype(np.float64),
            mask_ref=mask_ref,
        )
    )
    f_geo = provider.describe_geometric(
        GeometricRequest(
            points=sparse_pts,
            support=dense,
            diameter=model_diameter,
            radii=geo.radii,
            dims=geo.dims,
            frame="camera",
            indices=patch_idx,
            mask_ref=mask_ref,
        )
    )
    return FeatureCloud(points=sparse_pts, descriptors=fuse_batch(f_vis, f_geo, pca)), dense
