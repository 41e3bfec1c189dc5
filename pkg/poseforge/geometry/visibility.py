"""
Multi-view visibility by point-splat z-buffering.

Each view splats a square footprint of ``splat_px`` pixels per point into a
depth buffer; a point counts as visible in a view when its depth is within
the tolerance of the buffer at its own pixel. The buffer is built from the
tested points together with a dense surface sampling of the model, sized
so footprints close up into a watertight surface at template distance.
"""

import math
from typing import Sequence, Tuple

import numpy as np

from poseforge.core.errors import EmptyResult
from poseforge.core.types import CameraIntrinsics, ObjectModel, Pose
from poseforge.geometry.sampling import sample_surface
from poseforge.geometry.views import Viewpoint

MAX_OCCLUDERS = 200_000


def splat_offsets(splat_px: int) -> np.ndarray:
    half = splat_px // 2
    r = np.arange(-half, splat_px - half)
    dv, du = np.meshgrid(r, r, indexing="ij")
    return np.stack([du.ravel(), dv.ravel()], axis=1)


def splat_zbuffer(
    points_cam: np.ndarray, K: CameraIntrinsics, splat_px: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Z-buffer of camera-frame points splatted with a square footprint.

    Returns
    -------
    zbuf : ndarray
        (H, W) nearest depth per pixel, ``inf`` where nothing landed.
    pixels : ndarray
        (N, 2) rounded pixel of every point (undefined where not ``in_view``).
    in_view : ndarray
        Points in front of the camera whose pixel lies inside the image.
    """
    zbuf = np.full(K.height * K.width, np.inf)
    z = points_cam[:, 2]
    front = z > 1e-9
    pixels = np.zeros((len(points_cam), 2), dtype=np.int64)
    if np.any(front):
        pixels[front] = np.rint(K.project(points_cam[front])).astype(np.int64)
    in_view = (
        front
        & (pixels[:, 0] >= 0)
        & (pixels[:, 0] < K.width)
        & (pixels[:, 1] >= 0)
        & (pixels[:, 1] < K.height)
    )

    idx_front = np.flatnonzero(front)
    for du, dv in splat_offsets(splat_px):
        u = pixels[idx_front, 0] + du
        v = pixels[idx_front, 1] + dv
        ok = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
        np.minimum.at(zbuf, v[ok] * K.width + u[ok], z[idx_front[ok]])
    return zbuf.reshape(K.height, K.width), pixels, in_view


def occluder_samples(
    model: ObjectModel, views: Sequence[Viewpoint], splat_px: int, seed: int = 0
) -> np.ndarray:
    """Dense surface samples whose splats cover the surface in every view."""
    middle = 0.5 * (model.vertices.min(axis=0) + model.vertices.max(axis=0))
    nearest = min(
        max(np.linalg.norm(v.center - middle) - model.diameter / 2.0, 1e-6) for v in views
    )
    focal = max(max(v.intrinsics.fx, v.intrinsics.fy) for v in views)
    spacing = splat_px * nearest / focal
    count = int(min(MAX_OCCLUDERS, math.ceil(2.0 * model.surface_area / spacing**2)))
    points, _ = sample_surface(model, max(count, 1), np.random.default_rng(seed))
    return points


def visibility_matrix(
    points,
    model: ObjectModel,
    views: Sequence[Viewpoint],
    splat_px: int = 3,
    depth_tolerance: float = 0.01,
    seed: int = 0,
) -> np.ndarray:
    """
    Per-view visibility of model-frame points.

    Parameters
    ----------
    points : array-like
        (N, 3) points on or near the model surface.
    model : ObjectModel
        The model the points belong to.
    views : sequence of Viewpoint
        Template cameras.
    splat_px : int
        Splat footprint side in pixels.
    depth_tolerance : float
        Depth tolerance as a fraction of the model diameter.
    seed : int
        Seed of the occluder sampling.

    Returns
    -------
    ndarray
        (V, N) boolean matrix, True where the point is visible in the view.
    """
    points = np.asarray(points, dtype=np.float64)
    occluders = occluder_samples(model, views, splat_px, seed)
    everything = np.vstack([points, occluders])
    tol = depth_tolerance * model.diameter
    n = len(points)

    visible = np.zeros((len(views), n), dtype=bool)
    for i, view in enumerate(views):
        cam = view.pose.apply(everything)
        zbuf, pixels, in_view = splat_zbuffer(cam, view.intrinsics, splat_px)
        own = in_view[:n]
        u, v = pixels[:n, 0][own], pixels[:n, 1][own]
        visible[i, own] = cam[:n, 2][own] <= zbuf[v, u] + tol
    return visible


def visible_indices(visible: np.ndarray, min_views: int) -> np.ndarray:
    """
    Indices of points visible in at least ``min_views`` views.

    Parameters
    ----------
    visible : ndarray
        (V, N) matrix from :func:`visibility_matrix`.
    min_views : int
        Required number of views.

    Raises
    ------
    EmptyResult
        If no point is visible often enough.
    """
    if min_views <= 0:
        raise ValueError(f"min_views must be positive, got {min_views}")
    kept = np.flatnonzero(visible.sum(axis=0) >= min_views)
    if len(kept) == 0:
        raise EmptyResult(f"No point visible in {min_views} of {visible.shape[0]} views")
    return kept


def visibility_filter(
    points,
    model: ObjectModel,
    views: Sequence[Viewpoint],
    min_views: int,
    splat_px: int = 3,
    depth_tolerance: float = 0.01,
) -> np.ndarray:
    """
    Indices of points visible in at least ``min_views`` views.

    Returns
    -------
    ndarray
        Strictly increasing indices into ``points``.

    Raises
    ------
    EmptyResult
        If no point is visible often enough.
    """
    return visible_indices(
        visibility_matrix(points, model, views, splat_px, depth_tolerance), min_views
    )


def observed_indices(
    points,
    model: ObjectModel,
    pose: Pose,
    K: CameraIntrinsics,
    bitmap: np.ndarray,
    splat_px: int = 3,
    depth_tolerance: float = 0.01,
    seed: int = 0,
) -> np.ndarray:
    """
    Indices of model-frame points a scene camera would see inside a mask.

    A point is kept when, with the model placed at ``pose``, it survives the
    self-occlusion test of :func:`visibility_matrix` and its pixel lies
    inside ``bitmap``.

    Returns
    -------
    ndarray
        Strictly increasing indices into ``points``, possibly empty.
    """
    points = np.asarray(points, dtype=np.float64)
    bitmap = np.asarray(bitmap, dtype=bool)
    view = Viewpoint(pose, K)
    seen = visibility_matrix(points, model, [view], splat_px, depth_tolerance, seed)[0]

    idx = np.flatnonzero(seen)
    if len(idx) == 0:
        return idx
    uv = np.rint(K.project(pose.apply(points[idx]))).astype(np.int64)
    h, w = bitmap.shape
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    keep = np.zeros(len(idx), dtype=bool)
    keep[inside] = bitmap[uv[inside, 1], uv[inside, 0]]
    return idx[keep]
