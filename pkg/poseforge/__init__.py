"""
PoseForge: training-free 6D object pose estimation from descriptor-annotated
point clouds.

The package aligns a dense, descriptor-annotated object model to sparse
descriptor-annotated scene points by top-k feature matching, feature-aware
RANSAC registration and ICP refinement, then ranks the poses produced from
every candidate segmentation mask.
"""

__version__ = "0.1.0"
__author__ = "PoseForge Team"

from poseforge.core.pipeline import PoseEstimationPipeline
from poseforge.core.config_loader import ConfigLoader

__all__ = ["PoseEstimationPipeline", "ConfigLoader"]
