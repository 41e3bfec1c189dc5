"""
Template viewpoints on a sphere around the object.

Directions come from a subdivided icosahedron (12, 42, 162, 642, ...
vertices); 4 and 6 directions use the tetrahedron and octahedron, and any
other count is a farthest-point subset of the next larger icosphere.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import trimesh

from poseforge.core.types import CameraIntrinsics, Pose


@dataclass(frozen=True)
class Viewpoint:
    """Camera-from-world pose and the intrinsics of a template view."""

    pose: Pose
    intrinsics: CameraIntrinsics

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.pose.rotation.T @ self.pose.translation


def template_intrinsics(size: int = 480, fov_deg: float = 60.0) -> CameraIntrinsics:
    """Square pinhole camera with the given vertical field of view."""
    f = (size / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return CameraIntrinsics(fx=f, fy=f, cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def look_at(center, target=None) -> Pose:
    """Camera-from-world pose of a camera at ``center`` looking at ``target`` (default origin)."""
    center = np.asarray(center, dtype=np.float64)
    target = np.zeros(3) if target is None else np.asarray(target, dtype=np.float64)
    z = (target - center) / np.linalg.norm(target - center)
    ref = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(z, ref)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose(R, -R @ center)


def icosphere_directions(subdivisions: int) -> np.ndarray:
    """Unit vertices of an icosahedron subdivided ``subdivisions`` times."""
    mesh = trimesh.creation.icosphere(subdivisions=subdivisions)
    vertices = np.asarray(mesh.vertices, dtype=np.float64)
    return vertices / np.linalg.norm(vertices, axis=1, keepdims=True)


def _directions(count: int) -> np.ndarray:
    if count == 4:
        tetra = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
        return tetra / math.sqrt(3.0)
    if count == 6:
        return np.vstack([np.eye(3), -np.eye(3)])

    level = 0
    while 10 * 4**level + 2 < count:
        level += 1
    dirs = icosphere_directions(level)
    if len(dirs) == count:
        return dirs

    chosen = [0]
    dist = np.linalg.norm(dirs - dirs[0], axis=1)
    while len(chosen) < count:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(dirs - dirs[nxt], axis=1))
    return dirs[np.sort(chosen)]


def sample_template_viewpoints(
    count: int,
    radius: float,
    intrinsics: Optional[CameraIntrinsics] = None,
    target=None,
) -> List[Viewpoint]:
    """
    Cameras spread approximately uniformly on a sphere, all looking at its center.

    Parameters
    ----------
    count : int
        Number of viewpoints, at least 4.
    radius : float
        Sphere radius in meters.
    intrinsics : CameraIntrinsics, optional
        Template camera; defaults to a 480x480 camera with a 60° FOV.
    target : array-like, optional
        Sphere center the cameras look at; defaults to the origin.

    Returns
    -------
    list of Viewpoint
    """
    if count < 4:
        raise ValueError(f"At least 4 viewpoints are needed, got {count}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    intrinsics = intrinsics or template_intrinsics()
    target = np.zeros(3) if target is None else np.asarray(target, dtype=np.float64)
    return [
        Viewpoint(look_at(target + radius * d, target), intrinsics) for d in _directions(count)
    ]
