"""
Provenance tracking for pose estimation runs.

Every stage of the pipeline logs structured entries here instead of free
text: what ran, on which mask, with which parameters and how long it took.
The resulting JSON is the audit trail that makes a run reproducible.
"""

import json
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union


@dataclass
class ProvenanceEntry:
    """Single entry in the provenance log."""

    timestamp: str
    step: str
    action: str
    details: Dict[str, Any]
    duration_ms: Optional[float] = None
    mask_ref: Optional[int] = None
    file_used: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)


class ProvenanceTracker:
    """
    Tracks provenance information throughout a pose estimation run.

    Safe to share between the worker threads that process masks.
    """

    def __init__(self, run_id: Optional[str] = None):
        """
        Initialize the provenance tracker.

        Parameters
        ----------
        run_id : str, optional
            Unique identifier for this run. If not provided, will be generated.
        """
        self.run_id = run_id or f"run_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
        self.entries: List[ProvenanceEntry] = []
        self.start_time = datetime.now()
        self._lock = threading.Lock()

    def log(
        self,
        step: str,
        action: str,
        details: Dict[str, Any],
        duration_ms: Optional[float] = None,
        mask_ref: Optional[int] = None,
        file_used: Optional[str] = None,
    ) -> None:
        """
        Log a provenance entry.

        Parameters
        ----------
        step : str
            Pipeline step (e.g., "features", "registration", "pipeline").
        action : str
            Action taken (e.g., "fit_pca", "mask_skipped").
        details : dict
            JSON-serializable details about the action.
        duration_ms : float, optional
            Wall time spent in the action.
        mask_ref : int, optional
            Index of the candidate mask the action belongs to.
        file_used : str, optional
            Path to a file read or written by the action.
        """
        entry = ProvenanceEntry(
            timestamp=datetime.now().isoformat(),
            step=step,
            action=action,
            details=details,
            duration_ms=duration_ms,
            mask_ref=mask_ref,
            file_used=file_used,
        )
        with self._lock:
            self.entries.append(entry)

    @contextmanager
    def stage(
        self, step: str, action: str, mask_ref: Optional[int] = None, **details: Any
    ) -> Iterator[Dict[str, Any]]:
        """
        Time a block and log it on exit.

        The yielded dict can be filled with extra details inside the block.
        """
        extra: Dict[str, Any] = dict(details)
        start = time.perf_counter()
        try:
            yield extra
        finally:
            self.log(
                step=step,
                action=action,
                details=extra,
                duration_ms=(time.perf_counter() - start) * 1000.0,
                mask_ref=mask_ref,
            )

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert provenance log to dictionary.

        Returns
        -------
        dict
            Complete provenance log as dictionary.
        """
        end_time = datetime.now()
        duration_seconds = (end_time - self.start_time).total_seconds()

        with self._lock:
            entries = [entry.to_dict() for entry in self.entries]

        return {
            "run_id": self.run_id,
            "start_time": self.start_time.isoformat(),
            "end_time": end_time.isoformat(),
            "duration_seconds": duration_seconds,
            "entries": entries,
        }

    def save(self, output_path: Union[str, Path]) -> None:
        """
        Save provenance log to JSON file.

        Parameters
        ----------
        output_path : str or Path
            Path where the provenance log should be saved.
        """
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        with open(output_path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, default=str)

    def get_summary(self) -> Dict[str, Any]:
        """
        Get a summary of the provenance log.

        Returns
        -------
        dict
            Per-step action lists, entry counts and accumulated time.
        """
        steps: Dict[str, Dict[str, Any]] = {}
        with self._lock:
            entries = list(self.entries)
        for entry in entries:
            if entry.step not in steps:
                steps[entry.step] = {
                    "actions": [],
                    "total_duration_ms": 0.0,
                    "entry_count": 0,
                }
            steps[entry.step]["actions"].append(entry.action)
            steps[entry.step]["entry_count"] += 1
            if entry.duration_ms:
                steps[entry.step]["total_duration_ms"] += entry.duration_ms

        return {
            "run_id": self.run_id,
            "total_entries": len(entries),
            "steps": steps,
        }
