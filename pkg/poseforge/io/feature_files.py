"""
Feature-cloud files (``.fcl``) and PCA sidecars.

Layout, little-endian, no padding::

    "FCL1"            4 bytes magic
    N                 u32 point count
    D                 u32 descriptor dimension
    positions         N × 3 float32
    descriptors       N × D float32
"""

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from poseforge.core.errors import BadMagic, DimMismatch, FileMissing, TruncatedFile
from poseforge.core.types import FeatureCloud
from poseforge.features.pca import PcaProjection

MAGIC = b"FCL1"
_HEADER = struct.Struct("<4sII")


def save_feature_cloud(fc: FeatureCloud, path: Union[str, Path]) -> None:
    """
    Write a feature cloud to an ``.fcl`` file.

    Parameters
    ----------
    fc : FeatureCloud
        Cloud to save; values are stored as float32.
    path : str or Path
        Destination, parent directories are created.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, len(fc), fc.dim))
        f.write(np.ascontiguousarray(fc.points, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(fc.descriptors, dtype="<f4").tobytes())


def load_feature_cloud(
    path: Union[str, Path], expected_dim: Optional[int] = None
) -> FeatureCloud:
    """
    Read an ``.fcl`` file.

    Parameters
    ----------
    path : str or Path
        File to read.
    expected_dim : int, optional
        Descriptor dimension the caller requires.

    Raises
    ------
    FileMissing
        If the file does not exist.
    BadMagic
        If the file does not start with ``FCL1``.
    TruncatedFile
        If the header or payload is shorter than announced.
    DimMismatch
        If the payload is longer than announced or the dimension differs
        from ``expected_dim``.
    """
    path = Path(path)
    if not path.exists():
        raise FileMissing(f"Feature file not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        if not MAGIC.startswith(data[:4]):
            raise BadMagic(f"{path} is not a feature-cloud file")
        raise TruncatedFile(f"{path}: header is {len(data)} bytes, expected {_HEADER.size}")
    magic, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {MAGIC!r}")

    expected = _HEADER.size + 4 * n * (3 + d)
    if len(data) < expected:
        raise TruncatedFile(f"{path}: payload {len(data)} bytes, header announces {expected}")
    if len(data) > expected:
        raise DimMismatch(f"{path}: {len(data) - expected} bytes beyond the announced payload")
    if expected_dim is not None and d != expected_dim:
        raise DimMismatch(f"{path}: descriptor dim {d}, expected {expected_dim}")

    offset = _HEADER.size
    points = np.frombuffer(data, dtype="<f4", count=n * 3, offset=offset).reshape(n, 3)
    offset += 4 * n * 3
    descriptors = np.frombuffer(data, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    return FeatureCloud(points=points.astype(np.float64), descriptors=descriptors.astype(np.float64))


def pca_sidecar_path(fcl_path: Union[str, Path]) -> Path:
    """``query.fcl`` → ``query.fcl.pca.npz``."""
    fcl_path = Path(fcl_path)
    return fcl_path.with_name(fcl_path.name + ".pca.npz")


def save_pca(pca: PcaProjection, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, mean=pca.mean, basis=pca.basis, d_out=pca.d_out, rank=pca.rank)


def load_pca(path: Union[str, Path]) -> PcaProjection:
    path = Path(path)
    if not path.exists():
        raise FileMissing(f"PCA sidecar not found: {path}")
    with np.load(path) as data:
        return PcaProjection(
            mean=data["mean"],
            basis=data["basis"],
            d_out=int(data["d_out"]),
            rank=int(data["rank"]),
        )
