"""
Synthetic scenes with known ground truth.

Instances are splat-rendered into a z-buffer where the nearest surface
wins; each splatted pixel carries the exact depth of its triangle, so every
rendered pixel backprojects onto the posed mesh. Occlusion is a
directional bite: the part of an instance's silhouette furthest along a
random image direction is covered by a flat occluder in front of it.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from poseforge.core.errors import InstanceOutOfFrame
from poseforge.core.types import (
    CameraIntrinsics,
    CandidateMask,
    DepthImage,
    GroundTruthPose,
    ObjectModel,
    Pose,
    SceneBundle,
)
from poseforge.geometry.visibility import splat_offsets

MIN_DEPTH = 1e-6
SYNTH_SOURCE = "synth"


def default_camera() -> CameraIntrinsics:
    """640x480 camera with a Kinect-like focal length."""
    return CameraIntrinsics(fx=572.4, fy=573.6, cx=325.3, cy=242.0, width=640, height=480)


@dataclass(frozen=True, eq=False)
class SynthSceneSpec:
    """What to render."""

    model: ObjectModel
    gt_poses: Sequence[Pose]
    camera: CameraIntrinsics = field(default_factory=default_camera)
    occlusion_fraction: float = 0.0
    depth_noise_sigma: float = 0.0
    outlier_mask_fraction: float = 0.0
    seed: int = 0
    object_id: str = "obj"
    scene_id: str = "synth"
    background_offset: Optional[float] = 0.25

    def __post_init__(self):
        object.__setattr__(self, "gt_poses", tuple(self.gt_poses))
        if not self.gt_poses:
            raise ValueError("At least one ground-truth pose is required")
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise ValueError(f"occlusion_fraction must lie in [0, 1), got {self.occlusion_fraction}")
        if self.depth_noise_sigma < 0:
            raise ValueError("depth_noise_sigma must be non-negative")
        if self.outlier_mask_fraction < 0:
            raise ValueError("outlier_mask_fraction must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    """
    Ground truth of a synthetic scene.

    ``mask_instances[i]`` is the instance rendered in mask ``i`` or -1 for
    an outlier mask. ``full_area`` counts each instance's pixels before the
    occlusion bite, ``visible_area`` after it.
    """

    poses: Tuple[GroundTruthPose, ...]
    mask_instances: Tuple[int, ...]
    full_area: Tuple[int, ...]
    visible_area: Tuple[int, ...]


def _barycentric_grid(n: int) -> Tuple[np.ndarray, np.ndarray]:
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    return i[keep] / n, j[keep] / n


def splat_render(
    vertices_cam: np.ndarray, triangles: np.ndarray, K: CameraIntrinsics, splat_px: int = 3
) -> np.ndarray:
    """
    Depth of a camera-frame mesh at every pixel center (``inf`` = empty).

    Every triangle is sampled densely enough that neighbouring samples land
    at most one pixel apart, and each sample is splatted over a
    ``splat_px`` square. A splatted pixel takes the depth where its ray
    meets the sample's triangle, and only if the ray hits inside it, so the
    buffer holds the nearest surface exactly.
    """
    depth = np.full(K.height * K.width, np.inf)
    offsets = splat_offsets(splat_px)
    for tri in triangles:
        a, b, c = vertices_cam[tri]
        e1, e2 = b - a, c - a
        normal = np.cross(e1, e2)
        d00, d01, d11 = e1 @ e1, e1 @ e2, e2 @ e2
        den = d00 * d11 - d01 * d01
        if not den > 1e-24:
            continue

        uv = K.project(np.stack([a, b, c]))
        edge_px = np.linalg.norm(uv - np.roll(uv, 1, axis=0), axis=1).max()
        z = np.array([a[2], b[2], c[2]])
        n = int(math.ceil(edge_px * z.max() / z.min())) + 1
        s, t = _barycentric_grid(n)
        samples = a + s[:, None] * e1 + t[:, None] * e2
        pix = np.rint(K.project(samples)).astype(np.int64)
        cand = np.unique((pix[:, None, :] + offsets[None]).reshape(-1, 2), axis=0)
        cand = cand[
            (cand[:, 0] >= 0) & (cand[:, 0] < K.width) & (cand[:, 1] >= 0) & (cand[:, 1] < K.height)
        ]
        if len(cand) == 0:
            continue

        rays = np.column_stack(
            [(cand[:, 0] - K.cx) / K.fx, (cand[:, 1] - K.cy) / K.fy, np.ones(len(cand))]
        )
        facing = rays @ normal
        ok = np.abs(facing) > 1e-15
        rays, cand = rays[ok], cand[ok]
        zz = (normal @ a) / facing[ok]
        rel = zz[:, None] * rays - a
        d20, d21 = rel @ e1, rel @ e2
        beta = (d11 * d20 - d01 * d21) / den
        gamma = (d00 * d21 - d01 * d20) / den
        hit = (beta >= -1e-9) & (gamma >= -1e-9) & (beta + gamma <= 1.0 + 1e-9) & (zz > MIN_DEPTH)
        np.minimum.at(depth, cand[hit, 1] * K.width + cand[hit, 0], zz[hit])
    return depth.reshape(K.height, K.width)


def render_instances(
    model: ObjectModel, poses: Sequence[Pose], K: CameraIntrinsics
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Depth buffer and per-pixel instance index (-1 = empty) of posed instances.

    Raises
    ------
    InstanceOutOfFrame
        If an instance has a vertex at or behind the camera plane, or covers
        no pixel.
    """
    depth = np.full((K.height, K.width), np.inf)
    owner = np.full((K.height, K.width), -1, dtype=np.int64)
    for i, pose in enumerate(poses):
        cam = pose.apply(model.vertices)
        if np.any(cam[:, 2] <= MIN_DEPTH):
            raise InstanceOutOfFrame(f"Instance {i} has vertices behind the camera")
        inst = splat_render(cam, model.triangles, K)
        if not np.any(np.isfinite(inst)):
            raise InstanceOutOfFrame(f"Instance {i} covers no pixel of the image")
        closer = inst < depth
        depth[closer] = inst[closer]
        owner[closer] = i
    return depth, owner


def _bite(pixels: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of the ``fraction`` of pixels furthest along a random direction."""
    n_bite = int(round(fraction * len(pixels)))
    bitten = np.zeros(len(pixels), dtype=bool)
    if n_bite == 0:
        return bitten
    angle = rng.uniform(0.0, 2.0 * math.pi)
    proj = pixels @ np.array([math.cos(angle), math.sin(angle)])
    bitten[np.argsort(-proj, kind="stable")[:n_bite]] = True
    return bitten


def generate_scene(spec: SynthSceneSpec) -> Tuple[SceneBundle, GroundTruth]:
    """
    Render a synthetic scene.

    Parameters
    ----------
    spec : SynthSceneSpec
        Model, poses, camera, occlusion, noise and outlier settings.

    Returns
    -------
    (SceneBundle, GroundTruth)
        Masks ``0 .. len(gt_poses)-1`` are the instances in pose order with
        confidence ``1 - occlusion_fraction``; outlier masks over the
        background follow at confidences below 0.4.

    Raises
    ------
    InstanceOutOfFrame
        If an instance is behind the camera or entirely outside the image.
    """
    rng = np.random.default_rng(spec.seed)
    K = spec.camera
    model = spec.model
    depth, owner = render_instances(model, spec.gt_poses, K)

    instance_depth_max = float(np.max(depth[np.isfinite(depth)]))
    if spec.background_offset is not None:
        background = instance_depth_max + spec.background_offset * model.diameter
        depth[~np.isfinite(depth)] = background
    depth[~np.isfinite(depth)] = 0.0

    masks: List[CandidateMask] = []
    full_area, visible_area = [], []
    for i in range(len(spec.gt_poses)):
        rows, cols = np.nonzero(owner == i)
        full_area.append(len(rows))
        bitmap = np.zeros((K.height, K.width), dtype=bool)
        if len(rows):
            pixels = np.stack([cols, rows], axis=1).astype(np.float64)
            bitten = _bite(pixels, spec.occlusion_fraction, rng)
            if np.any(bitten):
                front = max(depth[rows, cols].min() - 0.2 * model.diameter, MIN_DEPTH * 10)
                depth[rows[bitten], cols[bitten]] = front
                owner[rows[bitten], cols[bitten]] = -2
            bitmap[rows[~bitten], cols[~bitten]] = True
        visible_area.append(int(bitmap.sum()))
        masks.append(
            CandidateMask(
                bitmap=bitmap,
                confidence=1.0 - spec.occlusion_fraction,
                source_id=SYNTH_SOURCE,
                object_id=spec.object_id,
            )
        )

    if spec.depth_noise_sigma > 0:
        valid = depth > 0
        noise = rng.normal(0.0, spec.depth_noise_sigma, size=depth.shape)
        depth[valid] = np.maximum(depth[valid] + noise[valid], MIN_DEPTH)

    mask_instances = list(range(len(spec.gt_poses)))
    n_outliers = int(round(spec.outlier_mask_fraction * len(spec.gt_poses)))
    side = int(max(4, math.sqrt(max(np.mean(full_area), 16.0))))
    free = owner == -1
    for _ in range(n_outliers):
        u0 = int(rng.integers(0, max(K.width - side, 1)))
        v0 = int(rng.integers(0, max(K.height - side, 1)))
        bitmap = np.zeros((K.height, K.width), dtype=bool)
        bitmap[v0 : v0 + side, u0 : u0 + side] = True
        bitmap &= free
        masks.append(
            CandidateMask(
                bitmap=bitmap,
                confidence=float(rng.uniform(0.05, 0.35)),
                source_id=SYNTH_SOURCE,
                object_id=spec.object_id,
            )
        )
        mask_instances.append(-1)

    scene = SceneBundle(
        depth=DepthImage(depth),
        intrinsics=K,
        masks=tuple(masks),
        scene_id=spec.scene_id,
    )
    truth = GroundTruth(
        poses=tuple(GroundTruthPose(spec.object_id, p) for p in spec.gt_poses),
        mask_instances=tuple(mask_instances),
        full_area=tuple(full_area),
        visible_area=tuple(visible_area),
    )
    return scene, truth


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def layout_poses(
    model: ObjectModel,
    count: int,
    camera: CameraIntrinsics,
    seed: int = 0,
    spacing: float = 1.3,
) -> List[Pose]:
    """
    Randomly rotated instances on a grid facing the camera.

    Instances sit ``spacing`` diameters apart at a depth where the whole
    grid fills about 70% of the image width, never closer than three
    diameters.
    """
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    cols = int(math.ceil(math.sqrt(count)))
    rows = int(math.ceil(count / cols))
    step = spacing * model.diameter
    width = cols * step
    z = max(3.0 * model.diameter, camera.fx * width / (0.7 * camera.width))
    middle = 0.5 * (model.vertices.min(axis=0) + model.vertices.max(axis=0))
    # Aim the grid at the image center.
    axis_xy = np.array([(camera.width / 2 - camera.cx) / camera.fx, (camera.height / 2 - camera.cy) / camera.fy])
    poses = []
    for n in range(count):
        r, c = divmod(n, cols)
        offset = np.array([(c - (cols - 1) / 2) * step, (r - (rows - 1) / 2) * step])
        R = random_rotation(rng)
        center = np.array([offset[0] + axis_xy[0] * z, offset[1] + axis_xy[1] * z, z])
        poses.append(Pose(R, center - R @ middle))
    return poses
