"""Synthetic scenes and pose-error metrics for desk-scale validation."""

from poseforge.evalkit.metrics import (
    Annotation,
    Prediction,
    average_precision,
    average_recall,
    evaluate,
    mspd,
    mssd,
)
from poseforge.evalkit.synth import GroundTruth, SynthSceneSpec, generate_scene, layout_poses

__all__ = [
    "Annotation",
    "Prediction",
    "average_precision",
    "average_recall",
    "evaluate",
    "mspd",
    "mssd",
    "GroundTruth",
    "SynthSceneSpec",
    "generate_scene",
    "layout_poses",
]
