"""Sparse-to-dense correspondence search in fused descriptor space."""

from poseforge.matching.topk import Correspondence, CorrespondenceSet, topk_correspondences

__all__ = ["Correspondence", "CorrespondenceSet", "topk_correspondences"]
