"""Tests for descriptor providers, PCA and fusion."""

import numpy as np
import pytest

from poseforge.core.config_loader import DescriptorProviderSpec, GeoScaleConfig
from poseforge.core.errors import (
    DimMismatch,
    IndexMismatch,
    MissingProviderParameter,
    NoValidDepth,
    RankDeficient,
    UnknownProvider,
    ZeroVector,
)
from poseforge.core.types import DepthImage, FeatureCloud, SceneBundle
from poseforge.features.fusion import (
    build_query_features,
    build_target_features,
    fuse,
    fuse_batch,
    subsample_dense,
    view_weights,
)
from poseforge.features.pca import fit_pca
from poseforge.features.providers import (
    DescriptorProvider,
    FileProvider,
    GeometricRequest,
    OracleProvider,
    VisualRequest,
    local_shape_descriptor,
    make_provider,
    provider_describe,
    register_provider,
)
from poseforge.geometry.sampling import poisson_disk_sample
from poseforge.geometry.views import sample_template_viewpoints, template_intrinsics
from poseforge.io.feature_files import save_feature_cloud

from tests.conftest import random_pose


def test_fit_pca_orthonormal_and_signed():
    """Test that PCA rows are orthonormal with a positive leading entry."""
    features = np.random.default_rng(0).normal(size=(200, 12))
    pca = fit_pca(features, 5)
    np.testing.assert_allclose(pca.basis @ pca.basis.T, np.eye(5), atol=1e-10)
    for row in pca.basis:
        assert row[np.flatnonzero(np.abs(row) > 1e-12)[0]] > 0
    assert pca.rank == 5


def test_fit_pca_is_deterministic():
    """Test that refitting gives identical output."""
    features = np.random.default_rng(1).normal(size=(50, 8))
    a, b = fit_pca(features, 4), fit_pca(features, 4)
    np.testing.assert_array_equal(a.basis, b.basis)
    np.testing.assert_array_equal(a.project(features), b.project(features))


def test_fit_pca_rank_deficient(provenance):
    """Test zero padding and strict mode on rank-deficient data."""
    rng = np.random.default_rng(2)
    features = rng.normal(size=(40, 2)) @ rng.normal(size=(2, 6))
    pca = fit_pca(features, 4, provenance=provenance)
    assert pca.rank == 2
    np.testing.assert_array_equal(pca.basis[2:], 0.0)
    assert provenance.entries[-1].action == "rank_deficient"
    with pytest.raises(RankDeficient):
        fit_pca(features, 4, strict=True)


def test_fit_pca_rejects_bad_dim():
    """Test that d_out must not exceed the input width."""
    with pytest.raises(ValueError):
        fit_pca(np.ones((5, 3)), 4)


def test_fuse_halves_are_unit():
    """Test that both halves of a fused descriptor have unit norm."""
    rng = np.random.default_rng(3)
    pca = fit_pca(rng.normal(size=(100, 10)), 4)
    fused = fuse(rng.normal(size=10), rng.normal(size=4), pca)
    assert fused.shape == (8,)
    assert np.linalg.norm(fused[:4]) == pytest.approx(1.0)
    assert np.linalg.norm(fused[4:]) == pytest.approx(1.0)


def test_fuse_errors():
    """Test dimension and zero-vector checks."""
    rng = np.random.default_rng(4)
    pca = fit_pca(rng.normal(size=(100, 10)), 4)
    with pytest.raises(DimMismatch):
        fuse(rng.normal(size=10), rng.normal(size=5), pca)
    with pytest.raises(ZeroVector):
        fuse(rng.normal(size=10), np.zeros(4), pca)
    with pytest.raises(ZeroVector):
        fuse(pca.mean, rng.normal(size=4), pca)
    with pytest.raises(DimMismatch):
        fuse_batch(rng.normal(size=(3, 10)), rng.normal(size=(2, 4)), pca)


def test_local_shape_descriptor_rotation_invariant(sphere_model):
    """Test that the shape histogram ignores rigid motion."""
    support = poisson_disk_sample(sphere_model, 600, seed=0)
    pose = random_pose(5)
    a = local_shape_descriptor(support[:20], support, 0.03, 24)
    b = local_shape_descriptor(pose.apply(support[:20]), pose.apply(support), 0.03, 24)
    assert a.shape == (20, 24)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_synthetic_provider_dims(box_model):
    """Test visual and geometric widths of the synthetic provider."""
    provider = make_provider(DescriptorProviderSpec(kind="synthetic-geometric"))
    support = poisson_disk_sample(box_model, 300, seed=0)
    vis = provider.describe(VisualRequest(points=support[:10], diameter=box_model.diameter, support=support))
    geo = provider.describe(
        GeometricRequest(points=support[:10], support=support, diameter=box_model.diameter, dims=(16, 16))
    )
    assert vis.shape == (10, provider.visual_dim) == (10, 96)
    assert geo.shape == (10, 32)


def test_oracle_provider_frames_agree(asymmetric_model):
    """Test that camera-frame points map to the model-frame encoding."""
    pose = random_pose(6)
    spec = DescriptorProviderSpec(kind="oracle", params={"model": asymmetric_model, "poses": [pose]})
    pts = asymmetric_model.vertices[:15]
    model_frame = provider_describe(spec, VisualRequest(points=pts, diameter=asymmetric_model.diameter))
    camera_frame = provider_describe(
        spec,
        VisualRequest(points=pose.apply(pts), diameter=asymmetric_model.diameter, frame="camera"),
    )
    np.testing.assert_allclose(model_frame, camera_frame, atol=1e-9)


def test_oracle_provider_needs_poses_for_camera_frame():
    """Test the oracle provider without ground truth."""
    provider = OracleProvider({})
    with pytest.raises(ValueError):
        provider.to_model_frame(np.zeros((1, 3)), "camera")


def test_unknown_provider():
    """Test that unknown kinds raise."""
    with pytest.raises(UnknownProvider):
        make_provider(DescriptorProviderSpec(kind="nope"))


def test_file_provider_names_missing_parameter(tmp_path):
    """Test that a file provider without its paths names the missing parameter."""
    provider = FileProvider({"visual": str(tmp_path / "q.visual.fcl")})
    request = VisualRequest(points=np.zeros((2, 3)), diameter=0.1, frame="camera", mask_ref=0)
    with pytest.raises(MissingProviderParameter, match="targets"):
        provider.describe_visual(request)
    with pytest.raises(MissingProviderParameter, match="geometric"):
        provider._path("geometric", None)


def test_register_provider():
    """Test plugging in a custom provider."""

    class ConstantProvider(DescriptorProvider):
        kind = "constant"

        @property
        def visual_dim(self):
            return 3

        def describe_visual(self, request):
            return np.ones((len(request.points), 3))

        def describe_geometric(self, request):
            return np.ones((len(request.points), int(sum(request.dims))))

    register_provider("constant", ConstantProvider)
    out = provider_describe(
        DescriptorProviderSpec(kind="constant"), VisualRequest(points=np.zeros((2, 3)), diameter=1.0)
    )
    assert out.shape == (2, 3)


def test_file_provider_reads_rows(tmp_path):
    """Test that the file provider serves rows by index."""
    rng = np.random.default_rng(7)
    save_feature_cloud(FeatureCloud(rng.normal(size=(6, 3)), rng.normal(size=(6, 5))), tmp_path / "v.fcl")
    provider = make_provider(DescriptorProviderSpec(kind="file", params={"visual": str(tmp_path / "v.fcl")}))
    rows = provider.describe(VisualRequest(points=np.zeros((2, 3)), diameter=1.0, indices=np.array([1, 4])))
    assert rows.shape == (2, 5)
    with pytest.raises(IndexMismatch):
        provider.describe(VisualRequest(points=np.zeros((2, 3)), diameter=1.0, indices=np.array([1, 9])))
    with pytest.raises(IndexMismatch):
        provider.describe(VisualRequest(points=np.zeros((2, 3)), diameter=1.0))


def test_view_weights_fall_back_to_uniform():
    """Test the uniform fallback for points facing away from every visible view."""
    views = sample_template_viewpoints(4, 1.0)
    points = np.zeros((2, 3))
    normals = np.stack([views[0].center, -views[0].center])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    visible = np.zeros((4, 2), dtype=bool)
    visible[0, :] = True
    weights = view_weights(points, normals, views, visible)
    assert weights[0, 0] == pytest.approx(1.0)
    assert weights[0, 1] == 1.0
    assert np.all(weights[1:] == 0.0)


def test_subsample_dense_keeps_order():
    """Test subsampling size and ordering."""
    points = np.arange(30, dtype=float).reshape(10, 3)
    sub = subsample_dense(points, 4, seed=0)
    assert len(sub) == 4
    assert np.all(np.diff(sub[:, 0]) > 0)
    assert subsample_dense(points, 20, seed=0) is points


@pytest.fixture
def query_views(asymmetric_model):
    middle = 0.5 * (asymmetric_model.vertices.min(axis=0) + asymmetric_model.vertices.max(axis=0))
    return sample_template_viewpoints(
        24, 2.5 * asymmetric_model.diameter, template_intrinsics(160, 60.0), target=middle
    )


def test_build_query_features(asymmetric_model, query_views, provenance):
    """Test that the query cloud is fused and logged."""
    cloud, pca = build_query_features(
        asymmetric_model,
        DescriptorProviderSpec(kind="synthetic-geometric"),
        GeoScaleConfig(),
        query_views,
        min_views=3,
        n_points=400,
        provenance=provenance,
    )
    assert 0 < len(cloud) <= 400
    assert cloud.dim == 128
    assert cloud.is_fused()
    assert pca.d_in == 96 and pca.d_out == 64
    actions = [e.action for e in provenance.entries]
    assert "query_sampling" in actions and "query_features" in actions


def test_build_target_features(synth_scene, asymmetric_model):
    """Test target features on a synthetic mask."""
    scene, truth = synth_scene
    spec = DescriptorProviderSpec(kind="oracle", params={"model": asymmetric_model, "poses": [truth.poses[0].pose]})
    rng = np.random.default_rng(8)
    pca = fit_pca(rng.normal(size=(200, 96)), 64)
    sparse, dense = build_target_features(
        scene, scene.masks[0], asymmetric_model.diameter, spec, GeoScaleConfig(), pca, dense_count=500, grid=8
    )
    assert 0 < len(sparse) <= 64
    assert sparse.is_fused()
    assert len(dense) == 500
    # Target points lie in front of the camera on the rendered instance.
    assert np.all(sparse.points[:, 2] > 0)


def test_build_target_features_no_depth(synth_scene, asymmetric_model):
    """Test a mask over invalid depth."""
    scene, _ = synth_scene
    empty_depth = SceneBundle(
        depth=DepthImage(np.zeros_like(scene.depth.values)),
        intrinsics=scene.intrinsics,
        masks=scene.masks,
    )
    pca = fit_pca(np.random.default_rng(9).normal(size=(200, 96)), 64)
    with pytest.raises(NoValidDepth):
        build_target_features(
            empty_depth,
            empty_depth.masks[0],
            asymmetric_model.diameter,
            DescriptorProviderSpec(),
            GeoScaleConfig(),
            pca,
        )


def test_build_target_features_precomputed(synth_scene, asymmetric_model, tmp_path):
    """Test that a precomputed sparse cloud is used as is."""
    scene, _ = synth_scene
    rng = np.random.default_rng(10)
    desc = rng.normal(size=(5, 128))
    precomputed = FeatureCloud(rng.normal(size=(5, 3)), desc)
    save_feature_cloud(precomputed, tmp_path / "0.fcl")
    with_file = SceneBundle(
        depth=scene.depth,
        intrinsics=scene.intrinsics,
        masks=scene.masks,
        precomputed_target_features={0: str(tmp_path / "0.fcl")},
    )
    pca = fit_pca(rng.normal(size=(200, 96)), 64)
    sparse, _ = build_target_features(
        with_file, with_file.masks[0], asymmetric_model.diameter, DescriptorProviderSpec(), GeoScaleConfig(), pca, mask_ref=0
    )
    np.testing.assert_allclose(sparse.descriptors, desc, rtol=1e-6)
