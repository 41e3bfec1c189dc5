"""
Blue-noise sampling of mesh surfaces.

Points are produced by weighted sample elimination: a dense uniform
pre-sample of the surface is thinned down to the requested count by
repeatedly removing the sample with the most crowded neighbourhood. A final
repair pass swaps out any pair that is still closer than the guaranteed
spacing radius.
"""

import heapq
import math
from typing import Tuple

import numpy as np
import trimesh
from scipy.spatial import cKDTree

from poseforge.core.errors import DegenerateMesh
from poseforge.core.types import ObjectModel

OVERSAMPLING = 5
SPACING_FACTOR = 0.25
_ALPHA = 8.0


def poisson_radius(area: float, count: int) -> float:
    """Minimum spacing guaranteed by :func:`poisson_disk_sample`."""
    return SPACING_FACTOR * math.sqrt(area / max(count, 1))


def sample_surface(
    model: ObjectModel, count: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Area-weighted uniform samples on the mesh surface.

    Returns
    -------
    points : ndarray
        (count, 3) surface points.
    faces : ndarray
        Index of the triangle each point was drawn from.
    """
    if not model.surface_area > 0:
        raise DegenerateMesh("Mesh has zero surface area")
    mesh = trimesh.Trimesh(vertices=model.vertices, faces=model.triangles, process=False)
    points, faces = trimesh.sample.sample_surface(mesh, count, seed=rng)
    return np.asarray(points, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def poisson_disk_sample(
    model: ObjectModel, target_count: int, seed: int = 0, return_faces: bool = False
):
    """
    Sample ``target_count`` well-spaced points on the model surface.

    Parameters
    ----------
    model : ObjectModel
        Mesh to sample.
    target_count : int
        Number of points to return.
    seed : int
        Seed of the pre-sample; identical seeds give identical output.
    return_faces : bool
        Also return the triangle index of every point.

    Returns
    -------
    ndarray or (ndarray, ndarray)
        (N, 3) points, N = target_count, pairwise no closer than
        :func:`poisson_radius` whenever the pre-sample allows it.

    Raises
    ------
    DegenerateMesh
        If the mesh has zero surface area.
    """
    if target_count <= 0:
        raise ValueError(f"target_count must be positive, got {target_count}")
    rng = np.random.default_rng(seed)
    area = model.surface_area
    if not area > 0:
        raise DegenerateMesh("Mesh has zero surface area")

    n_candidates = max(OVERSAMPLING * target_count, target_count + 1)
    candidates, faces = sample_surface(model, n_candidates, rng)

    if target_count == 1:
        keep = np.array([0])
    else:
        keep = _eliminate(candidates, target_count, area)
        keep = _repair_spacing(candidates, keep, poisson_radius(area, target_count))

    points = candidates[keep]
    if return_faces:
        return points, faces[keep]
    return points


def _eliminate(candidates: np.ndarray, target: int, area: float) -> np.ndarray:
    """Weighted sample elimination down to ``target`` samples."""
    n = len(candidates)
    r_max = math.sqrt(area / (2.0 * math.sqrt(3.0) * target))
    r_min = r_max * 0.65 * (1.0 - (target / n) ** 1.5)
    diameter = 2.0 * r_max

    tree = cKDTree(candidates)
    pairs = tree.query_pairs(diameter, output_type="ndarray")
    weights = np.zeros(n)
    if len(pairs):
        dist = np.linalg.norm(candidates[pairs[:, 0]] - candidates[pairs[:, 1]], axis=1)
        pair_w = (1.0 - np.maximum(dist, r_min) / diameter) ** _ALPHA
        np.add.at(weights, pairs[:, 0], pair_w)
        np.add.at(weights, pairs[:, 1], pair_w)
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        wts = np.concatenate([pair_w, pair_w])
        order = np.argsort(src, kind="stable")
        src, dst, wts = src[order], dst[order], wts[order]
        offsets = np.searchsorted(src, np.arange(n + 1))
    else:
        dst = np.zeros(0, dtype=np.int64)
        wts = np.zeros(0)
        offsets = np.zeros(n + 1, dtype=np.int64)

    alive = np.ones(n, dtype=bool)
    version = np.zeros(n, dtype=np.int64)
    heap = [(-weights[i], i, 0) for i in range(n)]
    heapq.heapify(heap)
    remaining = n
    while remaining > target:
        neg_w, i, ver = heapq.heappop(heap)
        if not alive[i] or ver != version[i]:
            continue
        alive[i] = False
        remaining -= 1
        for j, w in zip(dst[offsets[i] : offsets[i + 1]], wts[offsets[i] : offsets[i + 1]]):
            if alive[j]:
                weights[j] -= w
                version[j] += 1
                heapq.heappush(heap, (-weights[j], int(j), int(version[j])))
    return np.flatnonzero(alive)


def _repair_spacing(candidates: np.ndarray, keep: np.ndarray, radius: float) -> np.ndarray:
    """Replace kept samples closer than ``radius`` with spaced-out spares."""
    pairs = cKDTree(candidates[keep]).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return keep

    drop = set()
    for a, b in pairs:
        if a not in drop and b not in drop:
            drop.add(int(max(a, b)))
    survivors = np.delete(keep, sorted(drop))

    spares = np.setdiff1d(np.arange(len(candidates)), keep)
    dist, _ = cKDTree(candidates[survivors]).query(candidates[spares])
    added = []
    for s in spares[dist >= radius]:
        if len(added) == len(drop):
            break
        if added and np.min(np.linalg.norm(candidates[added] - candidates[s], axis=1)) < radius:
            continue
        added.append(int(s))
    return np.sort(np.concatenate([survivors, np.asarray(added, dtype=np.int64)]))
