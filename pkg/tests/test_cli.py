"""Tests for the command-line interface."""

import json

import pandas as pd
import pytest
import yaml
from typer.testing import CliRunner

from poseforge import __version__
from poseforge.cli import app, primitive_model
from poseforge.io.handlers import PREDICTION_COLUMNS

runner = CliRunner()


@pytest.fixture
def fast_config_file(tmp_path):
    """Small oracle configuration for end-to-end runs."""
    path = tmp_path / "fast.yaml"
    path.write_text(
        yaml.dump(
            {
                "provider": {"kind": "oracle"},
                "query": {"n_points": 500, "n_views": 24, "min_views": 3, "image_size": 160},
                "target": {"grid": 12, "dense_count": 1500},
                "ransac": {"iterations": 512, "chunk_size": 128},
                "icp": {"max_iterations": 30},
            }
        )
    )
    return path


def test_version():
    """Test the version command."""
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert __version__ in result.stdout


def test_validate(sample_config_file, tmp_path):
    """Test validating good and bad configuration files."""
    result = runner.invoke(app, ["validate", "--config", str(sample_config_file)])
    assert result.exit_code == 0
    assert "valid" in result.stdout

    result = runner.invoke(app, ["validate", "--config", str(tmp_path / "missing.yaml")])
    assert result.exit_code == 1

    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.dump({"ransac": {"iterations": -1}}))
    result = runner.invoke(app, ["validate", "--config", str(bad)])
    assert result.exit_code == 1
    assert "Error" in result.stdout


def test_primitive_model():
    """Test the built-in primitives."""
    assert primitive_model("box", 0.1).diameter == pytest.approx((0.1**2 + 0.07**2 + 0.04**2) ** 0.5)
    assert primitive_model("icosphere", 0.1).diameter == pytest.approx(0.1, rel=1e-6)
    with pytest.raises(ValueError):
        primitive_model("torus", 0.1)


def test_synth_writes_scene_layout(tmp_path):
    """Test the synthetic scene directory layout."""
    out = tmp_path / "scenes"
    result = runner.invoke(app, ["synth", "--out", str(out), "--scenes", "2", "--instances", "2", "--outliers", "0.5"])
    assert result.exit_code == 0, result.stdout
    for name in ("000000", "000001"):
        scene_dir = out / name
        for rel in ("camera.json", "depth.png", "gt.json", "models/obj.ply"):
            assert (scene_dir / rel).exists()
        assert len(json.loads((scene_dir / "gt.json").read_text())) == 2


def test_synth_unknown_shape(tmp_path):
    """Test that an unknown primitive fails cleanly."""
    result = runner.invoke(app, ["synth", "--out", str(tmp_path / "s"), "--shape", "torus"])
    assert result.exit_code == 1
    assert "Unknown shape" in result.stdout


def test_estimate_without_query(tmp_path):
    """Test that estimating before prepare fails with a hint."""
    scene = tmp_path / "scene"
    assert runner.invoke(app, ["synth", "--out", str(scene)]).exit_code == 0
    result = runner.invoke(
        app, ["estimate", "--scene", str(scene), "--object", "obj", "--out", str(tmp_path / "p.csv")]
    )
    assert result.exit_code == 1
    assert "prepare" in result.stdout


def test_estimate_rejects_bad_mode(tmp_path):
    """Test option validation."""
    result = runner.invoke(
        app,
        ["estimate", "--scene", str(tmp_path), "--object", "obj", "--out", str(tmp_path / "p.csv"), "--mode", "fast"],
    )
    assert result.exit_code != 0


@pytest.mark.integration
def test_prepare_estimate_eval(tmp_path, fast_config_file):
    """Test the full offline and online workflow."""
    scene = tmp_path / "scene"
    result = runner.invoke(app, ["synth", "--out", str(scene), "--seed", "3"])
    assert result.exit_code == 0, result.stdout

    query = scene / "features" / "obj.fcl"
    result = runner.invoke(
        app,
        [
            "prepare",
            "--model", str(scene / "models" / "obj.ply"),
            "--out", str(query),
            "--config", str(fast_config_file),
        ],
    )
    assert result.exit_code == 0, result.stdout
    assert query.exists()
    assert (scene / "features" / "obj.fcl.pca.npz").exists()
    assert (scene / "features" / "provenance.json").exists()

    pred = tmp_path / "out" / "pred.csv"
    result = runner.invoke(
        app,
        [
            "estimate",
            "--scene", str(scene),
            "--object", "obj",
            "--out", str(pred),
            "--config", str(fast_config_file),
            "--no-timing",
        ],
    )
    assert result.exit_code == 0, result.stdout
    frame = pd.read_csv(pred)
    assert list(frame.columns) == PREDICTION_COLUMNS
    assert len(frame) == 1
    provenance = json.loads((tmp_path / "out" / "provenance.json").read_text())
    assert "ransac" in [e["action"] for e in provenance["entries"]]

    result = runner.invoke(app, ["eval", "--pred", str(pred), "--gt", str(scene), "--metric", "ar"])
    assert result.exit_code == 0, result.stdout
    assert "ar_mssd" in result.stdout
    assert "ar_mspd" in result.stdout
