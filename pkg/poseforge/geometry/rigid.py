"""
Closed-form rigid alignment (Kabsch / Arun SVD solution).

The batched variant is what RANSAC uses to solve thousands of triplets at
once; the single-problem variant is shared by ICP and the public API.
"""

from typing import Tuple

import numpy as np

from poseforge.core.errors import DegenerateTriplet
from poseforge.core.types import Pose

MIN_TRIANGLE_AREA = 1e-12


def triangle_areas(triplets: np.ndarray) -> np.ndarray:
    """Areas of a (..., 3, 3) stack of triangles."""
    e1 = triplets[..., 1, :] - triplets[..., 0, :]
    e2 = triplets[..., 2, :] - triplets[..., 0, :]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=-1)


def kabsch_batch(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least-squares rigid transforms for a batch of point-set pairs.

    Parameters
    ----------
    src, dst : ndarray
        (B, N, 3) corresponding points.

    Returns
    -------
    R : ndarray
        (B, 3, 3) proper rotations.
    t : ndarray
        (B, 3) translations with ``R @ src_i + t ≈ dst_i``.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_src = src.mean(axis=1)
    mu_dst = dst.mean(axis=1)
    H = np.einsum("bni,bnj->bij", src - mu_src[:, None, :], dst - mu_dst[:, None, :])
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    d[d == 0] = 1.0
    D = np.zeros_like(H)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = mu_dst - np.einsum("bij,bj->bi", R, mu_src)
    return R, t


def kabsch(src, dst) -> Pose:
    """
    Rigid transform minimizing ``Σ ‖R·src_i + t − dst_i‖²``.

    Parameters
    ----------
    src, dst : array-like
        (N, 3) corresponding points, N ≥ 3.

    Returns
    -------
    Pose
        The least-squares rigid transform with ``det(R) = +1``.

    Raises
    ------
    DegenerateTriplet
        If the source points are collinear.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3 or len(src) < 3:
        raise ValueError(f"kabsch needs matching (N>=3, 3) arrays, got {src.shape} and {dst.shape}")
    if _is_collinear(src):
        raise DegenerateTriplet("Source points are collinear")
    R, t = kabsch_batch(src[None], dst[None])
    return Pose(R[0], t[0])


def _is_collinear(points: np.ndarray) -> bool:
    if len(points) == 3:
        return bool(triangle_areas(points) <= MIN_TRIANGLE_AREA)
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    return bool(singular[1] <= 1e-9 * max(singular[0], 1e-300))
