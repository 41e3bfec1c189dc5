"""
Scene, model, ground-truth and prediction file handlers.

Scene directory layout::

    camera.json                 fx, fy, cx, cy, width, height, depth_scale
    depth.png | depth.pgm       16-bit, value * depth_scale = meters, 0 = invalid
    masks/<source_id>/meta.json [{"file", "confidence", "object_id"}]
    masks/<source_id>/<idx>.pgm 8-bit, nonzero = inside
    models/<object_id>.ply      mesh, with models/<object_id>.json sidecar
    features/<object_id>.fcl    query cloud (+ .pca.npz sidecar)
    features/targets/<mask>.fcl optional precomputed sparse target clouds
    gt.json                     [{"object_id", "R": [9], "t": [3]}]
"""

import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import trimesh
from PIL import Image

from poseforge.core.errors import FileMissing
from poseforge.core.provenance import ProvenanceTracker
from poseforge.core.types import (
    CameraIntrinsics,
    CandidateMask,
    DepthImage,
    GroundTruthPose,
    ObjectModel,
    Pose,
    SceneBundle,
    compute_diameter,
)

PathLike = Union[str, Path]

ROTATION_COLUMNS = [f"R{i}{j}" for i in range(1, 4) for j in range(1, 4)]
TRANSLATION_COLUMNS = ["tx", "ty", "tz"]
PREDICTION_COLUMNS = (
    ["scene_id", "object_id", "mask_ref", "score_final", "score_coarse", "score_fine", "score_icp"]
    + ROTATION_COLUMNS
    + TRANSLATION_COLUMNS
)
DEFAULT_DEPTH_SCALE = 1e-4


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise FileMissing(f"File not found: {path}")
    with open(path, "r") as f:
        return json.load(f)


def _write_json(data: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2)


def pose_from_record(record: Dict[str, Any], scale: float = 1.0) -> Pose:
    """Pose from a ``{"R": [9], "t": [3]}`` record; ``t`` is multiplied by ``scale``."""
    R = np.asarray(record["R"], dtype=np.float64).reshape(3, 3)
    t = np.asarray(record["t"], dtype=np.float64) * scale
    return Pose(R, t)


def pose_to_record(pose: Pose) -> Dict[str, List[float]]:
    return {"R": pose.rotation.ravel().tolist(), "t": pose.translation.tolist()}


class DataHandler:
    """
    Handler for loading and saving PoseForge data.

    Depth images and masks are read through per-extension loaders, which
    plugins can extend with :meth:`register_loader`.
    """

    def __init__(self, provenance: Optional[ProvenanceTracker] = None):
        """Initialize the data handler."""
        self.provenance = provenance
        self._loaders: Dict[str, Callable[[Path], np.ndarray]] = {
            "png": self._load_image,
            "pgm": self._load_image,
        }

    def register_loader(self, extension: str, loader_func: Callable[[Path], np.ndarray]) -> None:
        """
        Register a custom image loader.

        Parameters
        ----------
        extension : str
            File extension without the dot (e.g., "tif").
        loader_func : callable
            Function that takes a Path and returns a 2-D array.
        """
        self._loaders[extension.lower()] = loader_func

    def _log(self, action: str, details: Dict[str, Any], file_used: Optional[Path] = None) -> None:
        if self.provenance:
            self.provenance.log(
                step="io",
                action=action,
                details=details,
                file_used=str(file_used) if file_used else None,
            )

    @staticmethod
    def _load_image(path: Path) -> np.ndarray:
        with Image.open(path) as image:
            return np.array(image)

    def load_image(self, path: PathLike) -> np.ndarray:
        """Read a single-channel image as an array."""
        path = Path(path)
        if not path.exists():
            raise FileMissing(f"Image not found: {path}")
        ext = path.suffix.lstrip(".").lower()
        if ext not in self._loaders:
            raise ValueError(
                f"Unsupported image format: {ext}. Supported formats: {list(self._loaders.keys())}"
            )
        image = self._loaders[ext](path)
        if image.ndim == 3:
            image = image[..., 0]
        return image

    # -- camera and depth ------------------------------------------------

    def load_camera(self, path: PathLike):
        """Intrinsics and depth scale from ``camera.json``."""
        data = _read_json(Path(path))
        intrinsics = CameraIntrinsics(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )
        return intrinsics, float(data.get("depth_scale", 1.0))

    def save_camera(self, intrinsics: CameraIntrinsics, depth_scale: float, path: PathLike) -> None:
        _write_json(
            {
                "fx": intrinsics.fx,
                "fy": intrinsics.fy,
                "cx": intrinsics.cx,
                "cy": intrinsics.cy,
                "width": intrinsics.width,
                "height": intrinsics.height,
                "depth_scale": depth_scale,
            },
            Path(path),
        )

    def load_depth(self, path: PathLike, depth_scale: float) -> DepthImage:
        raw = self.load_image(path)
        return DepthImage(raw.astype(np.float64) * depth_scale)

    def save_depth(self, depth: DepthImage, path: PathLike, depth_scale: float) -> None:
        """Write 16-bit depth; values beyond the 16-bit range are clipped."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        raw = np.clip(np.rint(depth.values / depth_scale), 0, np.iinfo(np.uint16).max)
        Image.fromarray(raw.astype(np.uint16)).save(path)

    # -- masks -----------------------------------------------------------

    def load_masks(self, masks_dir: PathLike) -> List[CandidateMask]:
        """All masks of every source, sources in name order, entries in meta order."""
        masks_dir = Path(masks_dir)
        masks: List[CandidateMask] = []
        if not masks_dir.exists():
            return masks
        for source_dir in sorted(p for p in masks_dir.iterdir() if p.is_dir()):
            for entry in _read_json(source_dir / "meta.json"):
                bitmap = self.load_image(source_dir / entry["file"]) > 0
                masks.append(
                    CandidateMask(
                        bitmap=bitmap,
                        confidence=float(entry["confidence"]),
                        source_id=source_dir.name,
                        object_id=str(entry["object_id"]),
                    )
                )
        return masks

    def save_masks(self, masks: Sequence[CandidateMask], masks_dir: PathLike) -> None:
        masks_dir = Path(masks_dir)
        meta: Dict[str, List[Dict[str, Any]]] = {}
        for mask in masks:
            entries = meta.setdefault(mask.source_id, [])
            name = f"{len(entries):06d}.pgm"
            source_dir = masks_dir / mask.source_id
            source_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(mask.bitmap.astype(np.uint8) * 255).save(source_dir / name)
            entries.append(
                {"file": name, "confidence": mask.confidence, "object_id": mask.object_id}
            )
        for source_id, entries in meta.items():
            _write_json(entries, masks_dir / source_id / "meta.json")

    # -- scenes ----------------------------------------------------------

    def load_scene(self, scene_dir: PathLike) -> SceneBundle:
        """
        Load a scene directory.

        Raises
        ------
        FileMissing
            If ``camera.json`` or the depth image is missing.
        """
        scene_dir = Path(scene_dir)
        intrinsics, depth_scale = self.load_camera(scene_dir / "camera.json")
        depth_path = next(
            (scene_dir / f"depth.{ext}" for ext in self._loaders if (scene_dir / f"depth.{ext}").exists()),
            None,
        )
        if depth_path is None:
            raise FileMissing(f"No depth image in {scene_dir}")
        depth = self.load_depth(depth_path, depth_scale)
        masks = self.load_masks(scene_dir / "masks")

        precomputed: Dict[int, str] = {}
        targets_dir = scene_dir / "features" / "targets"
        if targets_dir.exists():
            for path in sorted(targets_dir.glob("*.fcl")):
                if path.stem.isdigit() and int(path.stem) < len(masks):
                    precomputed[int(path.stem)] = str(path)

        self._log(
            "load_scene",
            {"masks": len(masks), "precomputed_targets": len(precomputed)},
            file_used=scene_dir,
        )
        return SceneBundle(
            depth=depth,
            intrinsics=intrinsics,
            masks=tuple(masks),
            precomputed_target_features=precomputed,
            scene_id=scene_dir.name,
        )

    def save_scene(
        self, scene: SceneBundle, scene_dir: PathLike, depth_scale: float = DEFAULT_DEPTH_SCALE
    ) -> Path:
        """Write ``camera.json``, ``depth.png`` and ``masks/``."""
        scene_dir = Path(scene_dir)
        scene_dir.mkdir(parents=True, exist_ok=True)
        self.save_camera(scene.intrinsics, depth_scale, scene_dir / "camera.json")
        self.save_depth(scene.depth, scene_dir / "depth.png", depth_scale)
        self.save_masks(scene.masks, scene_dir / "masks")
        self._log("save_scene", {"masks": len(scene.masks)}, file_used=scene_dir)
        return scene_dir

    # -- models ----------------------------------------------------------

    def load_object_model(self, ply_path: PathLike, sidecar: Optional[PathLike] = None) -> ObjectModel:
        """
        Load a mesh and its ``.json`` sidecar.

        The sidecar may hold ``diameter_m``, ``symmetries`` and a
        ``unit_scale`` converting file units to meters (applied to vertices
        and symmetry translations). A stored diameter that differs from the
        vertex diameter is logged and replaced.
        """
        ply_path = Path(ply_path)
        if not ply_path.exists():
            raise FileMissing(f"Model not found: {ply_path}")
        sidecar = Path(sidecar) if sidecar else ply_path.with_suffix(".json")
        meta = _read_json(sidecar) if sidecar.exists() else {}

        mesh = trimesh.load(ply_path, force="mesh", process=False)
        scale = float(meta.get("unit_scale", 1.0))
        vertices = np.asarray(mesh.vertices, dtype=np.float64) * scale
        triangles = np.asarray(mesh.faces, dtype=np.int64)
        symmetries = [pose_from_record(s, scale) for s in meta.get("symmetries", [])]

        diameter = compute_diameter(vertices)
        stored = meta.get("diameter_m")
        if stored is not None and abs(float(stored) - diameter) > 1e-9 * diameter:
            self._log(
                "diameter_mismatch",
                {"stored": float(stored), "computed": diameter},
                file_used=sidecar,
            )
        self._log("load_model", {"vertices": len(vertices), "faces": len(triangles)}, file_used=ply_path)
        return ObjectModel(
            vertices=vertices,
            triangles=triangles,
            diameter=diameter,
            symmetries=tuple(symmetries) if symmetries else (Pose.identity(),),
        )

    def save_object_model(self, model: ObjectModel, ply_path: PathLike) -> None:
        """Write the mesh as binary PLY plus its sidecar (meters)."""
        ply_path = Path(ply_path)
        ply_path.parent.mkdir(parents=True, exist_ok=True)
        mesh = trimesh.Trimesh(vertices=model.vertices, faces=model.triangles, process=False)
        mesh.export(ply_path)
        _write_json(
            {
                "diameter_m": model.diameter,
                "symmetries": [pose_to_record(s) for s in model.symmetries],
            },
            ply_path.with_suffix(".json"),
        )

    # -- ground truth ----------------------------------------------------

    def load_ground_truth(self, path: PathLike) -> List[GroundTruthPose]:
        records = _read_json(Path(path))
        return [GroundTruthPose(str(r["object_id"]), pose_from_record(r)) for r in records]

    def save_ground_truth(self, poses: Sequence[GroundTruthPose], path: PathLike) -> None:
        _write_json(
            [{"object_id": g.object_id, **pose_to_record(g.pose)} for g in poses], Path(path)
        )

    # -- predictions -----------------------------------------------------

    @staticmethod
    def predictions_frame(scene_id: str, results, timing: bool = True) -> pd.DataFrame:
        """
        One row per returned pose.

        Parameters
        ----------
        scene_id : str
            Scene the results belong to.
        results : sequence of EstimateResult
            Pipeline output.
        timing : bool
            Include the ``time_ms`` column.
        """
        rows = []
        for result in results:
            for scored in result.poses:
                row = {
                    "scene_id": scene_id,
                    "object_id": result.object_id,
                    "mask_ref": scored.mask_ref,
                    "score_final": scored.s_final,
                    "score_coarse": scored.s_coarse,
                    "score_fine": scored.s_fine,
                    "score_icp": scored.s_icp,
                }
                row.update(zip(ROTATION_COLUMNS, scored.pose.rotation.ravel()))
                row.update(zip(TRANSLATION_COLUMNS, scored.pose.translation))
                if timing:
                    row["time_ms"] = result.mask_timing_ms.get(scored.mask_ref, 0.0)
                rows.append(row)
        columns = PREDICTION_COLUMNS + (["time_ms"] if timing else [])
        return pd.DataFrame(rows, columns=columns)

    def save_predictions(self, frame: pd.DataFrame, path: PathLike, append: bool = False) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_header = not (append and path.exists())
        frame.to_csv(path, index=False, mode="a" if append else "w", header=write_header)
        self._log("save_predictions", {"rows": len(frame)}, file_used=path)

    def load_predictions(self, path: PathLike) -> pd.DataFrame:
        path = Path(path)
        if not path.exists():
            raise FileMissing(f"Predictions not found: {path}")
        frame = pd.read_csv(path, dtype={"scene_id": str, "object_id": str})
        missing = [c for c in PREDICTION_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"Predictions file {path} lacks columns: {missing}")
        return frame


def frame_poses(frame: pd.DataFrame) -> List[Pose]:
    """Poses of every row of a predictions frame."""
    R = frame[ROTATION_COLUMNS].to_numpy(dtype=np.float64).reshape(-1, 3, 3)
    t = frame[TRANSLATION_COLUMNS].to_numpy(dtype=np.float64)
    return [Pose(r, v) for r, v in zip(R, t)]
