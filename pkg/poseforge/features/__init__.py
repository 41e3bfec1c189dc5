"""Descriptor providers, PCA and descriptor fusion."""

from poseforge.features.fusion import build_query_features, build_target_features, fuse
from poseforge.features.pca import PcaProjection, fit_pca
from poseforge.features.providers import (
    DescriptorProvider,
    GeometricRequest,
    VisualRequest,
    make_provider,
    provider_describe,
    register_provider,
)

__all__ = [
    "build_query_features",
    "build_target_features",
    "fuse",
    "PcaProjection",
    "fit_pca",
    "DescriptorProvider",
    "GeometricRequest",
    "VisualRequest",
    "make_provider",
    "provider_describe",
    "register_provider",
]
