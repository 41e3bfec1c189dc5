"""Sampling, projection, visibility and rigid alignment primitives."""

from poseforge.geometry.camera import backproject, grid_patch_centers
from poseforge.geometry.rigid import kabsch, kabsch_batch
from poseforge.geometry.sampling import poisson_disk_sample
from poseforge.geometry.views import Viewpoint, sample_template_viewpoints
from poseforge.geometry.visibility import visibility_filter

__all__ = [
    "backproject",
    "grid_patch_centers",
    "kabsch",
    "kabsch_batch",
    "poisson_disk_sample",
    "Viewpoint",
    "sample_template_viewpoints",
    "visibility_filter",
]
