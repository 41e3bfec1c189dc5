"""Tests for camera, rigid alignment, sampling and visibility helpers."""

import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from poseforge.core.errors import DegenerateTriplet, EmptyMask, EmptyResult, OutOfBounds
from poseforge.core.types import CameraIntrinsics, CandidateMask, DepthImage, Pose
from poseforge.geometry.camera import backproject, grid_patch_centers, mask_pixels
from poseforge.geometry.rigid import kabsch, kabsch_batch
from poseforge.geometry.sampling import poisson_disk_sample, poisson_radius
from poseforge.geometry.views import Viewpoint, look_at, sample_template_viewpoints, template_intrinsics
from poseforge.geometry.visibility import (
    observed_indices,
    visibility_filter,
    visibility_matrix,
    visible_indices,
)

from tests.conftest import random_pose


@pytest.fixture
def tiny_camera():
    return CameraIntrinsics(fx=100.0, fy=110.0, cx=5.0, cy=4.0, width=10, height=8)


def test_backproject_known_pixel(tiny_camera):
    """Test the pinhole formula on one pixel."""
    depth = np.zeros((8, 10))
    depth[4, 7] = 2.0
    points, dropped = backproject(DepthImage(depth), tiny_camera, [[7, 4], [1, 1]])
    np.testing.assert_allclose(points, [[(7 - 5.0) * 2.0 / 100.0, 0.0, 2.0]])
    assert dropped.tolist() == [1]


def test_backproject_inverts_projection(tiny_camera):
    """Test that backprojected points project back to their pixels."""
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.5, 3.0, size=(8, 10))
    pixels = np.stack(np.meshgrid(np.arange(10), np.arange(8)), axis=-1).reshape(-1, 2)
    points, dropped = backproject(DepthImage(depth), tiny_camera, pixels)
    assert len(dropped) == 0
    np.testing.assert_allclose(tiny_camera.project(points), pixels, atol=1e-6)


def test_backproject_out_of_bounds(tiny_camera):
    """Test that pixels outside the image raise."""
    with pytest.raises(OutOfBounds):
        backproject(DepthImage(np.ones((8, 10))), tiny_camera, [[10, 0]])


def test_grid_patch_centers_inside_mask():
    """Test that lattice centers lie inside the mask and never exceed grid²."""
    bitmap = np.zeros((60, 80), dtype=bool)
    bitmap[10:50, 20:45] = True
    mask = CandidateMask(bitmap, 1.0, "src", "obj")
    centers = grid_patch_centers(mask, grid=8)
    assert 0 < len(centers) <= 64
    assert np.all(bitmap[centers[:, 1], centers[:, 0]])
    assert len(np.unique(centers, axis=0)) == len(centers)


def test_grid_patch_centers_single_pixel():
    """Test a one-pixel mask."""
    bitmap = np.zeros((5, 5), dtype=bool)
    bitmap[2, 3] = True
    centers = grid_patch_centers(CandidateMask(bitmap, 1.0, "src", "obj"), grid=16)
    assert centers.tolist() == [[3, 2]]


def test_grid_patch_centers_empty_mask():
    """Test that an empty mask raises."""
    with pytest.raises(EmptyMask):
        grid_patch_centers(CandidateMask(np.zeros((5, 5), dtype=bool), 1.0, "src", "obj"))


def test_mask_pixels_order():
    """Test that mask pixels are (u, v) in row-major order."""
    bitmap = np.zeros((3, 3), dtype=bool)
    bitmap[0, 2] = bitmap[1, 0] = True
    assert mask_pixels(CandidateMask(bitmap, 1.0, "s", "o")).tolist() == [[2, 0], [0, 1]]


def test_kabsch_recovers_pose():
    """Test exact recovery of a random rigid transform."""
    pose = random_pose(7)
    src = np.random.default_rng(1).normal(size=(20, 3))
    est = kabsch(src, pose.apply(src))
    np.testing.assert_allclose(est.rotation, pose.rotation, atol=1e-9)
    np.testing.assert_allclose(est.translation, pose.translation, atol=1e-9)


def test_kabsch_never_reflects():
    """Test that mirrored targets still give a proper rotation."""
    src = np.random.default_rng(2).normal(size=(10, 3))
    est = kabsch(src, src * [1.0, 1.0, -1.0])
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


def test_kabsch_collinear_raises():
    """Test that collinear sources are rejected."""
    src = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    with pytest.raises(DegenerateTriplet):
        kabsch(src, src)


def test_kabsch_batch_matches_single():
    """Test the batched solver against the single one."""
    rng = np.random.default_rng(3)
    src = rng.normal(size=(4, 3, 3))
    dst = np.stack([random_pose(i).apply(s) for i, s in enumerate(src)])
    R, t = kabsch_batch(src, dst)
    for b in range(4):
        single = kabsch(src[b], dst[b])
        np.testing.assert_allclose(R[b], single.rotation, atol=1e-9)
        np.testing.assert_allclose(t[b], single.translation, atol=1e-9)


def test_poisson_disk_sample_count_and_spacing(box_model):
    """Test exact count, surface membership and minimum spacing."""
    points = poisson_disk_sample(box_model, 400, seed=5)
    assert points.shape == (400, 3)
    half = np.array([0.05, 0.035, 0.02])
    on_face = np.isclose(np.abs(points), half, atol=1e-9).any(axis=1)
    assert on_face.all()
    assert np.all(np.abs(points) <= half + 1e-9)
    assert pdist(points).min() >= poisson_radius(box_model.surface_area, 400) * (1 - 1e-9)


def test_poisson_disk_sample_is_deterministic(sphere_model):
    """Test that the same seed gives the same samples."""
    a = poisson_disk_sample(sphere_model, 200, seed=11)
    b = poisson_disk_sample(sphere_model, 200, seed=11)
    c = poisson_disk_sample(sphere_model, 200, seed=12)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_template_viewpoints_look_at_target():
    """Test that every template camera sits on the sphere and sees its center."""
    target = np.array([0.01, -0.02, 0.03])
    views = sample_template_viewpoints(42, 0.5, template_intrinsics(160, 60.0), target=target)
    assert len(views) == 42
    for view in views:
        assert np.linalg.norm(view.center - target) == pytest.approx(0.5)
        cam = view.pose.apply(target[None])
        np.testing.assert_allclose(view.intrinsics.project(cam)[0], [80.0, 80.0], atol=1e-9)


@pytest.mark.parametrize("count", [4, 6, 12, 20, 162])
def test_template_viewpoint_counts(count):
    """Test the supported viewpoint counts."""
    views = sample_template_viewpoints(count, 1.0)
    centers = np.stack([v.center for v in views])
    assert len(views) == count
    assert len(np.unique(np.round(centers, 9), axis=0)) == count


def test_visibility_front_and_back(sphere_model):
    """Test that a sphere point is seen from its own side only."""
    views = [Viewpoint(look_at([0.25, 0.0, 0.0]), template_intrinsics(160, 60.0))]
    points = np.array([[0.05, 0.0, 0.0], [-0.05, 0.0, 0.0]])
    visible = visibility_matrix(points, sphere_model, views, splat_px=3, depth_tolerance=0.02)
    assert visible[0].tolist() == [True, False]


def test_visible_indices_empty():
    """Test that requiring more views than exist raises."""
    visible = np.ones((3, 5), dtype=bool)
    assert visible_indices(visible, 3).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(EmptyResult):
        visible_indices(visible, 4)


def test_visibility_filter_min_views(sphere_model):
    """Test that opposite sphere points each need their own view."""
    views = [
        Viewpoint(look_at([0.25, 0.0, 0.0]), template_intrinsics(160, 60.0)),
        Viewpoint(look_at([-0.25, 0.0, 0.0]), template_intrinsics(160, 60.0)),
    ]
    points = np.array([[0.05, 0.0, 0.0], [-0.05, 0.0, 0.0]])
    kept = visibility_filter(points, sphere_model, views, min_views=1, depth_tolerance=0.02)
    assert kept.tolist() == [0, 1]
    with pytest.raises(EmptyResult):
        visibility_filter(points, sphere_model, views, min_views=2, depth_tolerance=0.02)


def test_observed_indices_front_half_inside_mask(sphere_model, small_camera):
    """Test that a scene camera observes the near cap of a sphere, cut by the mask."""
    pose = Pose(np.eye(3), [0.0, 0.0, 0.5])
    points = poisson_disk_sample(sphere_model, 1000, seed=3)
    full = np.ones((small_camera.height, small_camera.width), dtype=bool)
    seen = observed_indices(points, sphere_model, pose, small_camera, full, depth_tolerance=0.05)

    cam = pose.apply(points)
    facing = np.einsum("ij,ij->i", cam - pose.translation, cam) < 0
    assert 0.25 < len(seen) / len(points) < 0.5
    assert facing[seen].mean() > 0.97

    left = full.copy()
    left[:, int(small_camera.cx) :] = False
    half = observed_indices(points, sphere_model, pose, small_camera, left, depth_tolerance=0.05)
    assert set(half) <= set(seen)
    assert np.all(small_camera.project(cam[half])[:, 0] < small_camera.cx + 0.5)
    assert 0.4 < len(half) / len(seen) < 0.6


def test_kabsch_beats_rotation_search():
    """Test that the closed form is never worse than a search over sampled rotations."""
    rng = np.random.default_rng(8)
    candidates = Rotation.random(3000, random_state=9).as_matrix()
    for i in range(100):
        src = rng.normal(scale=0.05, size=(3, 3))
        truth = random_pose(100 + i)
        dst = truth.apply(src) + rng.normal(scale=0.002, size=(3, 3))
        est = kabsch(src, dst)
        best = np.sum((est.apply(src) - dst) ** 2)

        rotations = np.concatenate([candidates, truth.rotation[None]])
        centered_src = src - src.mean(axis=0)
        centered_dst = dst - dst.mean(axis=0)
        moved = np.einsum("rij,nj->rni", rotations, centered_src)
        searched = np.sum((moved - centered_dst) ** 2, axis=(1, 2))
        assert best <= searched.min() + 1e-12


def test_kabsch_left_invariant():
    """Test that moving the targets rigidly composes onto the solution."""
    rng = np.random.default_rng(10)
    src = rng.normal(size=(12, 3))
    dst = random_pose(11).apply(src) + rng.normal(scale=0.01, size=(12, 3))
    g = random_pose(12, translation_scale=0.5)
    moved = kabsch(src, g.apply(dst))
    expected = g.compose(kabsch(src, dst))
    np.testing.assert_allclose(moved.rotation, expected.rotation, atol=1e-9)
    np.testing.assert_allclose(moved.translation, expected.translation, atol=1e-9)
