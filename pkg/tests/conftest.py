"""
Pytest configuration and fixtures.
"""

import numpy as np
import pytest
import trimesh
import yaml

from poseforge.core.config_loader import PoseForgeConfig
from poseforge.core.provenance import ProvenanceTracker
from poseforge.core.types import CameraIntrinsics, ObjectModel, Pose
from poseforge.evalkit.synth import SynthSceneSpec, generate_scene, layout_poses


def random_pose(seed: int, translation_scale: float = 0.1) -> Pose:
    """Random proper rigid transform."""
    from scipy.spatial.transform import Rotation

    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=rng).as_matrix()
    return Pose(R, rng.normal(0.0, translation_scale, 3))


def with_oracle(config: PoseForgeConfig, model: ObjectModel, poses) -> PoseForgeConfig:
    """Inject the oracle provider's model and ground-truth poses."""
    params = {**config.provider.params, "model": model, "poses": list(poses)}
    return config.model_copy(update={"provider": config.provider.model_copy(update={"params": params})})


def _mesh_model(mesh: trimesh.Trimesh) -> ObjectModel:
    return ObjectModel.from_mesh(np.asarray(mesh.vertices), np.asarray(mesh.faces))


@pytest.fixture
def box_model():
    """10 x 7 x 4 cm box."""
    return _mesh_model(trimesh.creation.box(extents=[0.10, 0.07, 0.04]))


@pytest.fixture
def sphere_model():
    """Icosphere of radius 5 cm."""
    return _mesh_model(trimesh.creation.icosphere(subdivisions=2, radius=0.05))


@pytest.fixture
def asymmetric_model():
    """Three boxes glued together; no rotational symmetry."""
    parts = [
        trimesh.creation.box(extents=[0.10, 0.06, 0.04]),
        trimesh.creation.box(
            extents=[0.04, 0.04, 0.04],
            transform=trimesh.transformations.translation_matrix([0.03, 0.05, 0.0]),
        ),
        trimesh.creation.box(
            extents=[0.02, 0.02, 0.03],
            transform=trimesh.transformations.translation_matrix([-0.04, -0.02, 0.035]),
        ),
    ]
    return _mesh_model(trimesh.util.concatenate(parts))


@pytest.fixture
def small_camera():
    """320x240 camera so rendering stays fast."""
    return CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240)


@pytest.fixture
def provenance():
    """Create a provenance tracker for testing."""
    return ProvenanceTracker(run_id="test_run")


@pytest.fixture
def fast_config():
    """Configuration scaled down for unit tests."""
    return PoseForgeConfig(
        query={"n_points": 600, "n_views": 24, "min_views": 3, "image_size": 160},
        target={"grid": 16, "dense_count": 1500},
        ransac={"iterations": 512, "chunk_size": 128},
        icp={"max_iterations": 30},
    )


@pytest.fixture
def oracle_config(fast_config):
    """Fast configuration with the oracle provider (params injected per test)."""
    return fast_config.with_overrides({"provider": {"kind": "oracle"}})


@pytest.fixture
def sample_config_file(tmp_path):
    """Create a sample configuration file."""
    config_dict = {
        "provider": {"kind": "synthetic-geometric"},
        "query": {"n_points": 600, "n_views": 24, "min_views": 3, "image_size": 160},
        "ransac": {"iterations": 512, "tau_inlier": 0.03, "scoring": "feature_aware"},
        "weights": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0},
        "mode": {"mode": "localization", "n_instances": 1},
    }

    config_file = tmp_path / "config.yaml"
    with open(config_file, "w") as f:
        yaml.dump(config_dict, f)

    return config_file


@pytest.fixture
def synth_scene(asymmetric_model, small_camera):
    """One unoccluded instance of the asymmetric model with its ground truth."""
    spec = SynthSceneSpec(
        model=asymmetric_model,
        gt_poses=layout_poses(asymmetric_model, 1, small_camera, seed=3),
        camera=small_camera,
        seed=3,
    )
    return generate_scene(spec)
