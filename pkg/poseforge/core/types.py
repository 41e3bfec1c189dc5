"""
Domain types shared by every PoseForge module.

All types are immutable after construction: arrays are copied on the way in
and flagged read-only, so instances can be shared freely across worker
threads. Units are meters and pixels throughout.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from poseforge.core.errors import DimMismatch, NotARotation, Reflection

ROTATION_TOL = 1e-6


def _frozen(array, dtype=np.float64, shape: Optional[Tuple] = None) -> np.ndarray:
    """Copy ``array`` into a read-only ndarray, optionally checking its shape."""
    out = np.array(array, dtype=dtype, copy=True)
    if shape is not None:
        if out.ndim != len(shape) or any(s is not None and s != o for s, o in zip(shape, out.shape)):
            raise ValueError(f"Expected array of shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """
    Rigid transform ``x -> R x + t``.

    Construction only checks shapes and finiteness; use
    :func:`validate_pose` to check that ``rotation`` is a proper rotation.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, shape=(3, 3))
        t = _frozen(np.reshape(self.translation, -1), shape=(3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("Pose contains non-finite values")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        """Build a pose from a 4x4 homogeneous matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        R_inv = self.rotation.T
        return Pose(R_inv, -R_inv @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


def validate_pose(pose: Pose) -> None:
    """
    Check that ``pose.rotation`` is a proper rotation.

    Raises
    ------
    NotARotation
        If ``RᵀR`` deviates from identity by ``ROTATION_TOL`` or more.
    Reflection
        If the matrix is orthonormal but has determinant -1.
    """
    R = pose.rotation
    deviation = np.max(np.abs(R.T @ R - np.eye(3)))
    if deviation >= ROTATION_TOL:
        raise NotARotation(f"Rotation is not orthonormal (max |RᵀR - I| = {deviation:.3e})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > ROTATION_TOL:
        raise Reflection(f"Rotation has determinant {det:.6f}, expected +1")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; pixel (u, v) is column u, row v."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points) -> np.ndarray:
        """Project camera-frame (N, 3) points to (N, 2) pixel coordinates."""
        points = np.asarray(points, dtype=np.float64)
        z = points[:, 2]
        u = self.fx * points[:, 0] / z + self.cx
        v = self.fy * points[:, 1] / z + self.cy
        return np.stack([u, v], axis=1)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel range along the optical axis in meters; 0 marks invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, shape=(None, None))
        if not np.all(np.isfinite(values)):
            raise ValueError("Depth image contains non-finite values")
        if np.any(values < 0):
            raise ValueError("Depth image contains negative values")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True, eq=False)
class CandidateMask:
    """Binary instance hypothesis produced by one segmentation source."""

    bitmap: np.ndarray
    confidence: float
    source_id: str
    object_id: str

    def __post_init__(self):
        object.__setattr__(self, "bitmap", _frozen(self.bitmap, dtype=bool, shape=(None, None)))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"Mask confidence must lie in [0, 1], got {self.confidence}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bitmap.shape

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())


def compute_diameter(vertices) -> float:
    """Maximum pairwise distance between vertices."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if len(vertices) < 2:
        return 0.0
    candidates = vertices
    if len(vertices) > 64:
        # The farthest pair always lies on the convex hull.
        try:
            candidates = vertices[ConvexHull(vertices).vertices]
        except (QhullError, ValueError):
            candidates = np.unique(vertices, axis=0)
    return float(pdist(candidates).max())


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """
    Triangle mesh of the query object.

    ``symmetries`` is a finite list of model-frame transforms that leave the
    object unchanged; the identity is always present.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    diameter: float
    symmetries: Tuple[Pose, ...] = field(default_factory=lambda: (Pose.identity(),))

    def __post_init__(self):
        vertices = _frozen(self.vertices, shape=(None, 3))
        triangles = _frozen(self.triangles, dtype=np.int64, shape=(None, 3))
        if len(vertices) == 0:
            raise ValueError("Object model has no vertices")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("Triangle index out of range")
        if not self.diameter > 0:
            raise ValueError(f"Diameter must be positive, got {self.diameter}")
        expected = compute_diameter(vertices)
        if abs(expected - self.diameter) > 1e-9 * expected:
            raise ValueError(
                f"Stored diameter {self.diameter} differs from vertex diameter {expected}"
            )
        symmetries = tuple(self.symmetries)
        if not any(
            np.allclose(s.rotation, np.eye(3), atol=1e-9) and np.allclose(s.translation, 0, atol=1e-12)
            for s in symmetries
        ):
            symmetries = (Pose.identity(),) + symmetries
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "diameter", float(self.diameter))
        object.__setattr__(self, "symmetries", symmetries)

    @classmethod
    def from_mesh(
        cls, vertices, triangles, symmetries: Optional[Sequence[Pose]] = None
    ) -> "ObjectModel":
        """Build a model, computing the diameter from the vertices."""
        return cls(
            vertices=vertices,
            triangles=triangles,
            diameter=compute_diameter(vertices),
            symmetries=tuple(symmetries) if symmetries else (Pose.identity(),),
        )

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals following the triangle winding (zero for degenerate faces)."""
        tri = self.vertices[self.triangles]
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        return np.divide(normals, norms, out=np.zeros_like(normals), where=norms > 0)

    @property
    def surface_area(self) -> float:
        return float(self.face_areas().sum())


@dataclass(frozen=True, eq=False)
class FeatureCloud:
    """3D points, each carrying a descriptor vector."""

    points: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        points = _frozen(self.points, shape=(None, 3))
        descriptors = _frozen(self.descriptors, shape=(None, None))
        if len(points) < 1:
            raise ValueError("FeatureCloud needs at least one point")
        if len(descriptors) != len(points):
            raise DimMismatch(
                f"{len(descriptors)} descriptors for {len(points)} points"
            )
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "descriptors", descriptors)

    @property
    def dim(self) -> int:
        return int(self.descriptors.shape[1])

    def __len__(self) -> int:
        return len(self.points)

    def half_norms(self) -> np.ndarray:
        """(N, 2) L2 norms of the two descriptor halves."""
        half = self.dim // 2
        return np.stack(
            [
                np.linalg.norm(self.descriptors[:, :half], axis=1),
                np.linalg.norm(self.descriptors[:, half:], axis=1),
            ],
            axis=1,
        )

    def is_fused(self, tol: float = 1e-5) -> bool:
        """True when every descriptor has two unit-norm halves."""
        return self.dim % 2 == 0 and bool(np.all(np.abs(self.half_norms() - 1.0) <= tol))


@dataclass(frozen=True, eq=False)
class ScoredPose:
    """Refined pose with the scores that ranked it."""

    pose: Pose
    s_coarse: float
    s_fine: float
    s_icp: float
    s_final: float
    mask_ref: int

    @classmethod
    def from_scores(
        cls,
        pose: Pose,
        s_coarse: float,
        s_fine: float,
        s_icp: float,
        weights,
        mask_ref: int,
    ) -> "ScoredPose":
        """Build a scored pose whose ``s_final`` follows the configured weights."""
        from poseforge.refinement.icp import final_score

        return cls(
            pose=pose,
            s_coarse=float(s_coarse),
            s_fine=float(s_fine),
            s_icp=float(s_icp),
            s_final=final_score(s_coarse, s_fine, s_icp, weights),
            mask_ref=int(mask_ref),
        )


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """
    One test image: depth, intrinsics and the candidate masks of every
    segmentation source, with optional precomputed target descriptor files
    keyed by mask index.
    """

    depth: DepthImage
    intrinsics: CameraIntrinsics
    masks: Tuple[CandidateMask, ...]
    precomputed_target_features: Dict[int, str] = field(default_factory=dict)
    scene_id: str = "scene"

    def __post_init__(self):
        masks = tuple(self.masks)
        if (self.depth.width, self.depth.height) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError("Depth image size does not match camera intrinsics")
        for i, mask in enumerate(masks):
            if mask.shape != (self.depth.height, self.depth.width):
                raise ValueError(
                    f"Mask {i} has shape {mask.shape}, image is {self.depth.height}x{self.depth.width}"
                )
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "precomputed_target_features", dict(self.precomputed_target_features))

    def masks_by_source(self) -> Dict[str, List[int]]:
        """Mask indices grouped by segmentation source, in input order."""
        groups: Dict[str, List[int]] = {}
        for i, mask in enumerate(self.masks):
            groups.setdefault(mask.source_id, []).append(i)
        return groups


@dataclass(frozen=True, eq=False)
class GroundTruthPose:
    """Annotated model-to-camera pose of one object instance."""

    object_id: str
    pose: Pose
