"""
Descriptor providers.

A provider turns points (and, for images, patch pixels) into visual and
geometric descriptors. Three kinds are built in:

``file``
    Descriptors computed elsewhere and stored as ``.fcl`` files, one row per
    sampled point or patch.
``synthetic-geometric``
    Handcrafted rotation-invariant histograms of local shape, usable for
    both channels at different neighbourhood sizes.
``oracle``
    Smooth injective encodings of model-frame coordinates, for tests and
    closed-loop validation only.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Type

import numpy as np
from scipy.spatial import cKDTree

from poseforge.core.config_loader import DescriptorProviderSpec
from poseforge.core.errors import IndexMismatch, MissingProviderParameter, UnknownProvider
from poseforge.core.types import ObjectModel, Pose
from poseforge.io.feature_files import load_feature_cloud

NORMAL_NEIGHBOURS = 16
MAX_SUPPORT = 2048


@dataclass(frozen=True, eq=False)
class VisualRequest:
    """Visual descriptors for ``points`` (model or camera frame)."""

    points: np.ndarray
    diameter: float
    frame: str = "model"
    support: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None
    pixels: Optional[np.ndarray] = None
    view_index: Optional[int] = None
    mask_ref: Optional[int] = None


@dataclass(frozen=True, eq=False)
class GeometricRequest:
    """Geometric descriptors of ``points`` from their neighbourhood in ``support``."""

    points: np.ndarray
    support: np.ndarray
    diameter: float
    radii: Sequence[float] = field(default_factory=lambda: (0.30, 0.40))
    dims: Sequence[int] = field(default_factory=lambda: (32, 32))
    frame: str = "model"
    indices: Optional[np.ndarray] = None
    mask_ref: Optional[int] = None


class DescriptorProvider(ABC):
    """Source of visual and geometric descriptors."""

    kind: str = ""
    view_dependent: bool = False

    def __init__(self, params: Optional[Mapping[str, Any]] = None):
        self.params: Dict[str, Any] = dict(params or {})

    @property
    @abstractmethod
    def visual_dim(self) -> int:
        """Width of the visual descriptors this provider emits."""

    @abstractmethod
    def describe_visual(self, request: VisualRequest) -> np.ndarray:
        """(N, visual_dim) descriptors."""

    @abstractmethod
    def describe_geometric(self, request: GeometricRequest) -> np.ndarray:
        """(N, Σ dims) descriptors."""

    def describe(self, request) -> np.ndarray:
        if isinstance(request, VisualRequest):
            return self.describe_visual(request)
        if isinstance(request, GeometricRequest):
            return self.describe_geometric(request)
        raise TypeError(f"Unsupported request type: {type(request).__name__}")


class FileProvider(DescriptorProvider):
    """
    Descriptors read from ``.fcl`` files.

    Parameters (``params``)
    -----------------------
    visual, geometric : str
        Query descriptor files, one row per raw sampled point.
    targets : str, optional
        Directory with ``<mask_ref>.visual.fcl`` / ``<mask_ref>.geometric.fcl``
        holding one row per grid patch of that mask.
    """

    kind = "file"

    def _path(self, channel: str, mask_ref: Optional[int]) -> Path:
        if mask_ref is None:
            if channel not in self.params:
                raise MissingProviderParameter(f"file provider needs a '{channel}' parameter")
            return Path(self.params[channel])
        if "targets" not in self.params:
            raise MissingProviderParameter("file provider needs a 'targets' directory for scene masks")
        return Path(self.params["targets"]) / f"{mask_ref}.{channel}.fcl"

    def _rows(self, channel: str, n_points: int, indices, mask_ref) -> np.ndarray:
        cloud = load_feature_cloud(self._path(channel, mask_ref))
        descriptors = cloud.descriptors
        if indices is None:
            if len(descriptors) != n_points:
                raise IndexMismatch(
                    f"{channel} file holds {len(descriptors)} rows, {n_points} points requested"
                )
            return descriptors
        indices = np.asarray(indices, dtype=np.int64)
        if len(indices) != n_points or (len(indices) and indices.max() >= len(descriptors)):
            raise IndexMismatch(
                f"{channel} file holds {len(descriptors)} rows, cannot serve indices "
                f"up to {int(indices.max()) if len(indices) else -1}"
            )
        return descriptors[indices]

    @property
    def visual_dim(self) -> int:
        return load_feature_cloud(self._path("visual", None)).dim

    def describe_visual(self, request: VisualRequest) -> np.ndarray:
        return self._rows("visual", len(request.points), request.indices, request.mask_ref)

    def describe_geometric(self, request: GeometricRequest) -> np.ndarray:
        out = self._rows("geometric", len(request.points), request.indices, request.mask_ref)
        if out.shape[1] != int(sum(request.dims)):
            raise IndexMismatch(
                f"geometric file has dim {out.shape[1]}, configuration expects {sum(request.dims)}"
            )
        return out


def estimate_normals(points: np.ndarray, support: np.ndarray, k: int = NORMAL_NEIGHBOURS) -> np.ndarray:
    """Unoriented unit normals of ``points`` from their k nearest support points."""
    k = min(k, len(support))
    _, idx = cKDTree(support).query(points, k=k)
    idx = np.asarray(idx).reshape(len(points), k)
    nbrs = support[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def _soft_histogram(values: np.ndarray, owners: np.ndarray, n_owners: int, bins: int) -> np.ndarray:
    """Linearly interpolated histograms of values in [0, 1], one per owner."""
    pos = np.clip(values, 0.0, 1.0) * (bins - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, bins - 1)
    frac = pos - lo
    hist = np.zeros(n_owners * bins)
    np.add.at(hist, owners * bins + lo, 1.0 - frac)
    np.add.at(hist, owners * bins + hi, frac)
    return hist.reshape(n_owners, bins)


def local_shape_descriptor(
    points: np.ndarray, support: np.ndarray, radius: float, dim: int
) -> np.ndarray:
    """
    Rotation-invariant local shape histogram.

    For every support neighbour within ``radius`` three invariants are
    binned: normalized distance, ``|n_p·n_q|`` and ``|n_p·(q-p)|/‖q-p‖``.
    Histograms are normalized by the neighbour count.
    """
    if dim < 3:
        raise ValueError(f"descriptor dim must be at least 3, got {dim}")
    points = np.asarray(points, dtype=np.float64)
    support = np.asarray(support, dtype=np.float64)
    if len(support) > MAX_SUPPORT:
        support = support[np.linspace(0, len(support) - 1, MAX_SUPPORT).astype(np.int64)]

    b_dist = dim // 4
    b_normal = (dim - b_dist) // 2
    b_elev = dim - b_dist - b_normal

    n_points = estimate_normals(points, support)
    n_support = estimate_normals(support, support)

    neighbours = cKDTree(support).query_ball_point(points, radius)
    counts = np.array([len(nb) for nb in neighbours], dtype=np.int64)
    owners = np.repeat(np.arange(len(points)), counts)
    others = np.fromiter((j for nb in neighbours for j in nb), dtype=np.int64, count=counts.sum())

    offsets = support[others] - points[owners]
    dist = np.linalg.norm(offsets, axis=1)
    keep = dist > 1e-12
    owners, others, offsets, dist = owners[keep], others[keep], offsets[keep], dist[keep]

    n_p = n_points[owners]
    s_dist = dist / radius
    s_normal = np.abs(np.einsum("ij,ij->i", n_p, n_support[others]))
    s_elev = np.abs(np.einsum("ij,ij->i", n_p, offsets)) / dist

    hist = np.hstack(
        [
            _soft_histogram(s_dist, owners, len(points), b_dist),
            _soft_histogram(s_normal, owners, len(points), b_normal),
            _soft_histogram(s_elev, owners, len(points), b_elev),
        ]
    )
    n_nb = np.bincount(owners, minlength=len(points)).astype(np.float64)
    return hist / np.maximum(n_nb, 1.0)[:, None]


class SyntheticGeometricProvider(DescriptorProvider):
    """
    Handcrafted local shape descriptors for both channels.

    The visual channel uses smaller neighbourhoods (``visual_radii``,
    fractions of the diameter, ``visual_bins`` dims each) than the
    geometric channel, which follows the request's scales.
    """

    kind = "synthetic-geometric"

    @property
    def _visual_radii(self):
        return [float(r) for r in self.params.get("visual_radii", (0.10, 0.15, 0.20))]

    @property
    def visual_dim(self) -> int:
        return int(self.params.get("visual_bins", 32)) * len(self._visual_radii)

    def describe_visual(self, request: VisualRequest) -> np.ndarray:
        support = request.support if request.support is not None else request.points
        bins = int(self.params.get("visual_bins", 32))
        return np.hstack(
            [
                local_shape_descriptor(request.points, support, r * request.diameter, bins)
                for r in self._visual_radii
            ]
        )

    def describe_geometric(self, request: GeometricRequest) -> np.ndarray:
        return np.hstack(
            [
                local_shape_descriptor(request.points, request.support, r * request.diameter, d)
                for r, d in zip(request.radii, request.dims)
            ]
        )


def _as_pose(value) -> Pose:
    if isinstance(value, Pose):
        return value
    R = np.asarray(value["R"], dtype=np.float64).reshape(3, 3)
    return Pose(R, np.asarray(value["t"], dtype=np.float64))


class OracleProvider(DescriptorProvider):
    """
    Encodings of model-frame coordinates (tests only).

    Parameters (``params``)
    -----------------------
    model : ObjectModel
        Needed to map camera-frame points back to the model frame.
    poses : list of Pose or {"R", "t"} dicts
        Ground-truth model-to-camera poses of the instances in the scene.
    seed : int
        Seed of the random frequencies.
    visual_dim : int
        Width of the visual channel (even).
    frequency : float
        Frequency scale in cycles per diameter.
    """

    kind = "oracle"

    def __init__(self, params: Optional[Mapping[str, Any]] = None):
        super().__init__(params)
        self._poses = [_as_pose(p) for p in self.params.get("poses", [])]
        self._model: Optional[ObjectModel] = self.params.get("model")
        self._surface_tree: Optional[cKDTree] = None
        if self._model is not None:
            from poseforge.geometry.sampling import sample_surface

            dense, _ = sample_surface(self._model, 20000, np.random.default_rng(0))
            self._surface_tree = cKDTree(np.vstack([self._model.vertices, dense]))

    @property
    def visual_dim(self) -> int:
        return int(self.params.get("visual_dim", 96))

    def _frequencies(self, dim: int, salt: int, diameter: float):
        rng = np.random.default_rng([int(self.params.get("seed", 0)), salt, dim])
        scale = float(self.params.get("frequency", 1.0)) * 2.0 * np.pi / diameter
        W = rng.normal(0.0, scale, size=(dim // 2, 3))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=dim // 2)
        return W, phase

    def to_model_frame(self, points: np.ndarray, frame: str) -> np.ndarray:
        """Model-frame coordinates of ``points``."""
        if frame == "model":
            return np.asarray(points, dtype=np.float64)
        if not self._poses or self._surface_tree is None:
            raise ValueError("oracle provider needs 'model' and 'poses' for camera-frame points")
        candidates = np.stack([p.inverse().apply(points) for p in self._poses])
        dists = np.stack([self._surface_tree.query(c)[0] for c in candidates])
        best = np.argmin(dists, axis=0)
        return candidates[best, np.arange(len(points))]

    def _encode(self, points: np.ndarray, dim: int, salt: int, diameter: float) -> np.ndarray:
        W, phase = self._frequencies(dim, salt, diameter)
        arg = points @ W.T + phase
        out = np.hstack([np.sin(arg), np.cos(arg)])
        if dim % 2:
            out = np.hstack([out, points[:, :1] / diameter])
        return out

    def describe_visual(self, request: VisualRequest) -> np.ndarray:
        pts = self.to_model_frame(request.points, request.frame)
        return self._encode(pts, self.visual_dim, 0, request.diameter)

    def describe_geometric(self, request: GeometricRequest) -> np.ndarray:
        pts = self.to_model_frame(request.points, request.frame)
        return self._encode(pts, int(sum(request.dims)), 1, request.diameter)


_PROVIDERS: Dict[str, Type[DescriptorProvider]] = {
    FileProvider.kind: FileProvider,
    SyntheticGeometricProvider.kind: SyntheticGeometricProvider,
    OracleProvider.kind: OracleProvider,
}


def register_provider(kind: str, provider_cls: Type[DescriptorProvider]) -> None:
    """
    Register a custom provider class.

    This is the hook where learned encoders plug in.
    """
    _PROVIDERS[kind] = provider_cls


def make_provider(spec: DescriptorProviderSpec) -> DescriptorProvider:
    """Instantiate the provider named by ``spec.kind``."""
    if spec.kind not in _PROVIDERS:
        raise UnknownProvider(
            f"Unknown provider kind: {spec.kind}. Known kinds: {sorted(_PROVIDERS)}"
        )
    return _PROVIDERS[spec.kind](spec.params)


def provider_describe(spec: DescriptorProviderSpec, request) -> np.ndarray:
    """Describe a visual or geometric request with the provider named by ``spec``."""
    return make_provider(spec).describe(request)
