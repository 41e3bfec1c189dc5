"""Tests for provenance tracking."""

import json
import threading

from poseforge.core.provenance import ProvenanceTracker


def test_provenance_tracker_initialization():
    """Test provenance tracker initialization."""
    tracker = ProvenanceTracker()
    assert tracker.run_id is not None
    assert len(tracker.entries) == 0


def test_provenance_log():
    """Test logging provenance entries."""
    tracker = ProvenanceTracker(run_id="test_run")

    tracker.log(
        step="registration",
        action="ransac",
        details={"iterations": 100},
        mask_ref=3,
    )

    assert len(tracker.entries) == 1
    assert tracker.entries[0].step == "registration"
    assert tracker.entries[0].action == "ransac"
    assert tracker.entries[0].mask_ref == 3


def test_provenance_stage():
    """Test timing a block."""
    tracker = ProvenanceTracker(run_id="test_run")
    with tracker.stage("features", "prepare_query", object_id="obj") as details:
        details["points"] = 42

    entry = tracker.entries[0]
    assert entry.action == "prepare_query"
    assert entry.details == {"object_id": "obj", "points": 42}
    assert entry.duration_ms >= 0.0


def test_provenance_stage_logs_on_error():
    """Test that a failing block is still logged."""
    tracker = ProvenanceTracker(run_id="test_run")
    try:
        with tracker.stage("refinement", "icp", mask_ref=1):
            raise RuntimeError("boom")
    except RuntimeError:
        pass
    assert tracker.entries[0].mask_ref == 1


def test_provenance_threads():
    """Test concurrent logging from worker threads."""
    tracker = ProvenanceTracker(run_id="test_run")

    def work(ref):
        for _ in range(50):
            tracker.log(step="pipeline", action="mask_estimated", details={}, mask_ref=ref)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(tracker.entries) == 200


def test_provenance_save(tmp_path):
    """Test saving provenance log to file."""
    tracker = ProvenanceTracker(run_id="test_run")
    tracker.log(step="test", action="test_action", details={})

    output_file = tmp_path / "out" / "provenance.json"
    tracker.save(output_file)

    assert output_file.exists()

    with open(output_file) as f:
        data = json.load(f)

    assert data["run_id"] == "test_run"
    assert len(data["entries"]) == 1


def test_provenance_to_dict():
    """Test converting provenance to dictionary."""
    tracker = ProvenanceTracker(run_id="test_run")
    tracker.log(step="test", action="test_action", details={"key": "value"})

    data = tracker.to_dict()

    assert "run_id" in data
    assert "start_time" in data
    assert "end_time" in data
    assert "entries" in data
    assert len(data["entries"]) == 1


def test_provenance_summary():
    """Test getting provenance summary."""
    tracker = ProvenanceTracker(run_id="test_run")

    tracker.log(step="registration", action="ransac", details={}, duration_ms=10.0)
    tracker.log(step="registration", action="ransac", details={}, duration_ms=20.0)
    tracker.log(step="refinement", action="icp", details={}, duration_ms=5.0)

    summary = tracker.get_summary()

    assert summary["total_entries"] == 3
    assert "registration" in summary["steps"]
    assert summary["steps"]["registration"]["entry_count"] == 2
    assert summary["steps"]["registration"]["total_duration_ms"] == 30.0
