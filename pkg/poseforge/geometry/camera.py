"""
Pinhole camera operations: backprojection and patch-grid placement.
"""

from typing import Tuple

import numpy as np

from poseforge.core.errors import EmptyMask, OutOfBounds
from poseforge.core.types import CameraIntrinsics, CandidateMask, DepthImage


def backproject(
    depth: DepthImage, K: CameraIntrinsics, pixels
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lift pixels to camera-frame 3D points using the depth map.

    Parameters
    ----------
    depth : DepthImage
        Depth in meters; 0 marks invalid pixels.
    K : CameraIntrinsics
        Camera intrinsics.
    pixels : array-like
        (P, 2) pixel coordinates ``(u, v)``. Depth is read at the rounded
        pixel, the coordinates themselves enter the pinhole formula.

    Returns
    -------
    points : ndarray
        (P_valid, 3) points for pixels with depth > 0, in input order.
    dropped : ndarray
        Indices into ``pixels`` whose depth was 0.

    Raises
    ------
    OutOfBounds
        If any pixel lies outside the image.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    cols = np.rint(pixels[:, 0]).astype(np.int64)
    rows = np.rint(pixels[:, 1]).astype(np.int64)
    outside = (cols < 0) | (cols >= depth.width) | (rows < 0) | (rows >= depth.height)
    if np.any(outside):
        raise OutOfBounds(
            f"{int(outside.sum())} pixel(s) outside the {depth.width}x{depth.height} image"
        )
    d = depth.values[rows, cols]
    valid = d > 0
    u, v, d = pixels[valid, 0], pixels[valid, 1], d[valid]
    points = np.stack([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d], axis=1)
    return points, np.flatnonzero(~valid)


def grid_patch_centers(mask: CandidateMask, grid: int = 16) -> np.ndarray:
    """
    Patch centers of a ``grid × grid`` lattice laid over the mask.

    The lattice spans the smallest axis-aligned square enclosing the mask;
    only centers whose pixel lies inside the mask are kept, so at most
    ``grid²`` centers are returned. Centers falling on the same pixel are
    reported once.

    Returns
    -------
    ndarray
        (P, 2) integer pixel coordinates ``(u, v)`` in lattice order.

    Raises
    ------
    EmptyMask
        If the mask has no pixel.
    """
    if grid <= 0:
        raise ValueError(f"grid must be positive, got {grid}")
    rows, cols = np.nonzero(mask.bitmap)
    if len(rows) == 0:
        raise EmptyMask(f"Mask from source '{mask.source_id}' is empty")

    r0, r1 = rows.min(), rows.max()
    c0, c1 = cols.min(), cols.max()
    side = max(r1 - r0 + 1, c1 - c0 + 1)
    top = r0 + ((r1 - r0 + 1) - side) / 2.0
    left = c0 + ((c1 - c0 + 1) - side) / 2.0

    # Lattice cell centers in continuous pixel-edge coordinates.
    steps = (np.arange(grid) + 0.5) * side / grid
    vv, uu = np.meshgrid(top + steps, left + steps, indexing="ij")
    u = np.floor(uu.ravel()).astype(np.int64)
    v = np.floor(vv.ravel()).astype(np.int64)

    height, width = mask.shape
    inside = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    u, v = u[inside], v[inside]
    keep = mask.bitmap[v, u]
    centers = np.stack([u[keep], v[keep]], axis=1)

    _, first = np.unique(centers, axis=0, return_index=True)
    return centers[np.sort(first)]


def mask_pixels(mask: CandidateMask) -> np.ndarray:
    """All (u, v) pixels inside the mask, row-major."""
    rows, cols = np.nonzero(mask.bitmap)
    return np.stack([cols, rows], axis=1)
