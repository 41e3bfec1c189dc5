"""Coarse registration by feature-aware RANSAC."""

from poseforge.registration.ransac import (
    CoarseResult,
    prune_triplet,
    ransac_register,
    score_hypothesis,
)

__all__ = ["CoarseResult", "prune_triplet", "ransac_register", "score_hypothesis"]
