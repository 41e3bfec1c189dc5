"""Tests for triplet pruning, hypothesis scoring and RANSAC."""

import numpy as np
import pytest

from poseforge.core.config_loader import RansacConfig
from poseforge.core.errors import NoValidHypothesis, TooFewCorrespondences
from poseforge.core.types import FeatureCloud, Pose
from poseforge.matching.topk import Correspondence, CorrespondenceSet, topk_correspondences
from poseforge.registration.ransac import (
    prune_triplet,
    ransac_register,
    sample_triplets,
    score_hypothesis,
)

from tests.conftest import random_pose

DIAMETER = 0.17


@pytest.fixture
def problem():
    """A query cloud and a posed subset of it carrying the same descriptors."""
    rng = np.random.default_rng(0)
    query_pts = rng.uniform(-0.05, 0.05, size=(200, 3))
    desc = rng.normal(size=(200, 16))
    query = FeatureCloud(query_pts, desc)
    pose = random_pose(11, translation_scale=0.2)
    picked = rng.choice(200, size=60, replace=False)
    target = FeatureCloud(
        pose.apply(query_pts[picked]), desc[picked] + rng.normal(0.0, 0.05, size=(60, 16))
    )
    return target, query, pose, picked


def test_prune_triplet_keeps_rigid_copy():
    """Test that a rigidly moved triplet is kept."""
    pts = np.array([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.0, 0.04, 0.0]])
    moved = random_pose(1).apply(pts)
    c = [Correspondence(i, i, 1.0) for i in range(3)]
    assert prune_triplet(*c, moved, pts, RansacConfig(), DIAMETER)


def test_prune_triplet_rejects_stretch_and_length():
    """Test edge-ratio and maximum-length pruning."""
    pts = np.array([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.0, 0.04, 0.0]])
    c = [Correspondence(i, i, 1.0) for i in range(3)]
    assert not prune_triplet(*c, pts * 1.5, pts, RansacConfig(), DIAMETER)
    far = pts * 10.0
    assert not prune_triplet(*c, far, far, RansacConfig(max_pair_distance=1.0), DIAMETER)


def test_score_hypothesis_true_pose(problem):
    """Test that the true pose scores near one in both modes."""
    target, query, pose, picked = problem
    corrs = CorrespondenceSet(np.arange(60), picked, np.full(60, 0.9))
    score, inliers = score_hypothesis(pose, corrs, target, query, 0.005)
    assert score == pytest.approx(0.9)
    assert len(inliers) == 60
    ratio, _ = score_hypothesis(pose, corrs, target, query, 0.005, mode="inlier_ratio")
    assert ratio == pytest.approx(1.0)


def test_score_hypothesis_one_inlier_per_target(problem):
    """Test that a target with several inliers counts its best one only."""
    target, query, pose, picked = problem
    corrs = CorrespondenceSet(
        target_idx=[0, 0, 1],
        query_idx=[picked[0], picked[0], picked[1]],
        similarity=[0.3, 0.8, 0.6],
    )
    score, inliers = score_hypothesis(pose, corrs, target, query, 0.005)
    assert score == pytest.approx((0.8 + 0.6) / 60)
    assert inliers.tolist() == [1, 2]


def test_score_hypothesis_clipped_and_wrong_pose(problem):
    """Test the score range and a pose far from the truth."""
    target, query, pose, picked = problem
    corrs = CorrespondenceSet(np.arange(60), picked, np.full(60, -0.5))
    score, _ = score_hypothesis(pose, corrs, target, query, 0.005)
    assert score == 0.0
    far = Pose(pose.rotation, pose.translation + 10.0)
    score, inliers = score_hypothesis(far, corrs, target, query, 0.005, mode="inlier_ratio")
    assert score == 0.0 and len(inliers) == 0
    with pytest.raises(ValueError):
        score_hypothesis(pose, corrs, target, query, 0.0)


def test_sample_triplets_distinct_and_reproducible():
    """Test that every triplet spans three target groups."""
    sizes = np.array([3, 1, 2, 4, 1])
    offsets = np.r_[0, np.cumsum(sizes)[:-1]]
    group_of = np.repeat(np.arange(5), sizes)
    picks = sample_triplets(42, 0, 500, sizes, offsets)
    assert picks.shape == (500, 3)
    for row in picks:
        assert len(set(group_of[row])) == 3
    np.testing.assert_array_equal(picks[100:200], sample_triplets(42, 100, 200, sizes, offsets))
    assert not np.array_equal(picks, sample_triplets(43, 0, 500, sizes, offsets))


def test_ransac_recovers_pose(problem, provenance):
    """Test pose recovery from top-k matches with noise."""
    target, query, pose, _ = problem
    corrs = topk_correspondences(target, query, 3)
    cfg = RansacConfig(iterations=2000, chunk_size=256)
    result = ransac_register(corrs, target, query, cfg, DIAMETER, provenance=provenance, mask_ref=4)
    np.testing.assert_allclose(result.pose.rotation, pose.rotation, atol=1e-6)
    np.testing.assert_allclose(result.pose.translation, pose.translation, atol=1e-6)
    assert 0.5 < result.s_coarse <= 1.0
    assert result.inlier_count >= 55
    assert provenance.entries[-1].action == "ransac"
    assert provenance.entries[-1].mask_ref == 4


def test_ransac_independent_of_workers(problem):
    """Test that worker count never changes the selected hypothesis."""
    target, query, _, _ = problem
    corrs = topk_correspondences(target, query, 5)
    cfg = RansacConfig(iterations=1000, chunk_size=64, seed=9)
    single = ransac_register(corrs, target, query, cfg, DIAMETER, workers=1)
    for workers in (4, 16):
        multi = ransac_register(corrs, target, query, cfg, DIAMETER, workers=workers)
        assert single.iteration == multi.iteration
        assert single.pose == multi.pose
        assert single.s_coarse == multi.s_coarse


def test_ransac_equivariant_under_rigid_motion(problem):
    """Test that moving the target rigidly moves the estimate with it."""
    target, query, _, _ = problem
    corrs = topk_correspondences(target, query, 3)
    cfg = RansacConfig(iterations=500, seed=5)
    g = random_pose(21, translation_scale=0.3)
    moved = FeatureCloud(g.apply(target.points), target.descriptors)

    base = ransac_register(corrs, target, query, cfg, DIAMETER)
    shifted = ransac_register(corrs, moved, query, cfg, DIAMETER)
    expected = g.compose(base.pose)
    assert shifted.iteration == base.iteration
    assert shifted.s_coarse == pytest.approx(base.s_coarse, abs=1e-12)
    np.testing.assert_allclose(shifted.pose.rotation, expected.rotation, atol=1e-9)
    np.testing.assert_allclose(shifted.pose.translation, expected.translation, atol=1e-9)


def test_ransac_too_few_correspondences(problem):
    """Test that two matched target points are not enough."""
    target, query, _, picked = problem
    corrs = CorrespondenceSet([0, 0, 1], picked[:3], [0.9, 0.8, 0.7])
    with pytest.raises(TooFewCorrespondences):
        ransac_register(corrs, target, query, RansacConfig(iterations=10), DIAMETER)


def test_ransac_all_pruned(problem):
    """Test that a scaled target leaves no valid hypothesis."""
    _, query, _, picked = problem
    scaled = FeatureCloud(query.points[picked] * 3.0, query.descriptors[picked])
    corrs = CorrespondenceSet(np.arange(60), picked, np.ones(60))
    with pytest.raises(NoValidHypothesis):
        ransac_register(corrs, scaled, query, RansacConfig(iterations=200), DIAMETER)
