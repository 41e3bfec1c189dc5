"""
Symmetry-aware pose errors and their recall / precision aggregates.

MSSD and MSPD are computed on model vertices. Estimates are matched to
annotations of the same scene and object greedily in score order, each
estimate taking the unmatched annotation it fits best.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from poseforge.core.config_loader import MetricConfig
from poseforge.core.errors import BehindCamera
from poseforge.core.types import CameraIntrinsics, ObjectModel, Pose

PoseError = Callable[[Pose, Pose], float]


def _symmetric_gt_points(gt: Pose, model: ObjectModel) -> np.ndarray:
    """(S, V, 3) vertices under ``gt ∘ S`` for every symmetry S."""
    R = np.stack([gt.rotation @ s.rotation for s in model.symmetries])
    t = np.stack([gt.rotation @ s.translation + gt.translation for s in model.symmetries])
    return np.einsum("sij,vj->svi", R, model.vertices) + t[:, None, :]


def mssd(est: Pose, gt: Pose, model: ObjectModel) -> float:
    """Maximum symmetry-aware surface distance in meters."""
    pts_est = est.apply(model.vertices)
    pts_gt = _symmetric_gt_points(gt, model)
    return float(np.linalg.norm(pts_gt - pts_est[None], axis=2).max(axis=1).min())


def _project(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    z = points[..., 2]
    if np.any(z <= 0):
        raise BehindCamera(f"{int(np.sum(z <= 0))} projected vertex(es) at or behind the camera")
    return np.stack(
        [K.fx * points[..., 0] / z + K.cx, K.fy * points[..., 1] / z + K.cy], axis=-1
    )


def mspd(est: Pose, gt: Pose, model: ObjectModel, K: CameraIntrinsics) -> float:
    """Maximum symmetry-aware projection distance in pixels."""
    proj_est = _project(est.apply(model.vertices), K)
    proj_gt = _project(_symmetric_gt_points(gt, model), K)
    return float(np.linalg.norm(proj_gt - proj_est[None], axis=2).max(axis=1).min())


def average_recall(errors: Sequence[float], cfg: MetricConfig) -> float:
    """Mean over thresholds of the fraction of errors strictly below the threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    if len(errors) == 0:
        return 0.0
    thresholds = np.asarray(cfg.thresholds, dtype=np.float64)
    return float(np.mean(errors[None, :] < thresholds[:, None]))


@dataclass(frozen=True)
class Prediction:
    """A scored pose estimate."""

    scene_id: str
    object_id: str
    pose: Pose
    score: float


@dataclass(frozen=True)
class Annotation:
    """A ground-truth instance."""

    scene_id: str
    object_id: str
    pose: Pose


def _groups(predictions: Sequence[Prediction], annotations: Sequence[Annotation]):
    keys = sorted({(a.scene_id, a.object_id) for a in annotations} | {(p.scene_id, p.object_id) for p in predictions})
    for key in keys:
        preds = [i for i, p in enumerate(predictions) if (p.scene_id, p.object_id) == key]
        gts = [j for j, a in enumerate(annotations) if (a.scene_id, a.object_id) == key]
        yield key, preds, gts


def error_matrix(
    predictions: Sequence[Prediction],
    annotations: Sequence[Annotation],
    error_fn: Callable[[Prediction, Annotation], float],
) -> np.ndarray:
    """(P, A) errors; ``inf`` between different scenes or objects."""
    errors = np.full((len(predictions), len(annotations)), np.inf)
    for _, preds, gts in _groups(predictions, annotations):
        for i in preds:
            for j in gts:
                errors[i, j] = error_fn(predictions[i], annotations[j])
    return errors


def _ranked(predictions: Sequence[Prediction]) -> List[int]:
    return sorted(range(len(predictions)), key=lambda i: -predictions[i].score)


def annotation_errors(predictions: Sequence[Prediction], errors: np.ndarray) -> np.ndarray:
    """
    Error of every annotation after greedy matching (``inf`` if unmatched).

    Estimates are visited by descending score; each takes the unmatched
    annotation with the smallest finite error.
    """
    n_ann = errors.shape[1]
    result = np.full(n_ann, np.inf)
    taken = np.zeros(n_ann, dtype=bool)
    for i in _ranked(predictions):
        row = np.where(taken, np.inf, errors[i])
        if n_ann == 0 or not np.isfinite(row.min()):
            continue
        j = int(np.argmin(row))
        taken[j] = True
        result[j] = row[j]
    return result


def average_precision(
    predictions: Sequence[Prediction], errors: np.ndarray, cfg: MetricConfig
) -> float:
    """
    Mean over thresholds of the all-point interpolated average precision.

    Per threshold, estimates are visited by descending score and each is a
    true positive when an unmatched annotation lies below the threshold
    (the closest one is consumed).
    """
    n_pred, n_ann = errors.shape
    if n_pred == 0 or n_ann == 0:
        return 0.0
    order = _ranked(predictions)
    aps = []
    for threshold in cfg.thresholds:
        taken = np.zeros(n_ann, dtype=bool)
        tp = np.zeros(n_pred)
        for rank, i in enumerate(order):
            row = np.where(taken | (errors[i] >= threshold), np.inf, errors[i])
            if np.isfinite(row.min()):
                taken[int(np.argmin(row))] = True
                tp[rank] = 1.0
        cum_tp = np.cumsum(tp)
        precision = cum_tp / np.arange(1, n_pred + 1)
        recall = cum_tp / n_ann
        # Precision envelope, then area under the step curve.
        envelope = np.maximum.accumulate(precision[::-1])[::-1]
        prev_recall = np.r_[0.0, recall[:-1]]
        aps.append(float(np.sum((recall - prev_recall) * envelope)))
    return float(np.mean(aps))


@dataclass
class EvaluationReport:
    """Aggregated metrics of one evaluation run."""

    metric: str
    value: float
    details: Dict[str, float]


def evaluate(
    predictions: Sequence[Prediction],
    annotations: Sequence[Annotation],
    models: Dict[str, ObjectModel],
    cameras: Dict[str, CameraIntrinsics],
    metric: str,
    mssd_cfg: Optional[MetricConfig] = None,
    mspd_cfg: Optional[MetricConfig] = None,
) -> EvaluationReport:
    """
    Evaluate predictions against annotations.

    Parameters
    ----------
    predictions, annotations : sequences
        Estimates and ground truth, linked by scene and object id.
    models : dict
        Object model per object id.
    cameras : dict
        Intrinsics per scene id (needed for MSPD).
    metric : {"mssd", "mspd", "ar", "ap"}
        ``mssd``/``mspd`` report the recall over their threshold sweep,
        ``ar`` the mean of both, ``ap`` the average precision over the
        MSSD sweep.
    mssd_cfg, mspd_cfg : MetricConfig, optional
        Threshold sweeps; MSSD thresholds are fractions of the diameter.
    """
    mssd_cfg = mssd_cfg or MetricConfig.mssd_default()
    mspd_cfg = mspd_cfg or MetricConfig.mspd_default()

    def rel_mssd(p: Prediction, a: Annotation) -> float:
        model = models[a.object_id]
        return mssd(p.pose, a.pose, model) / model.diameter

    def px_mspd(p: Prediction, a: Annotation) -> float:
        return mspd(p.pose, a.pose, models[a.object_id], cameras[a.scene_id])

    if metric == "ap":
        value = average_precision(predictions, error_matrix(predictions, annotations, rel_mssd), mssd_cfg)
        return EvaluationReport("ap", value, {"predictions": len(predictions), "annotations": len(annotations)})

    details: Dict[str, float] = {}
    recalls = []
    if metric in ("mssd", "ar"):
        errs = annotation_errors(predictions, error_matrix(predictions, annotations, rel_mssd))
        details["ar_mssd"] = average_recall(errs, mssd_cfg)
        details["mean_mssd"] = _finite_mean(errs)
        recalls.append(details["ar_mssd"])
    if metric in ("mspd", "ar"):
        errs = annotation_errors(predictions, error_matrix(predictions, annotations, px_mspd))
        details["ar_mspd"] = average_recall(errs, mspd_cfg)
        details["mean_mspd"] = _finite_mean(errs)
        recalls.append(details["ar_mspd"])
    if not recalls:
        raise ValueError(f"Unknown metric: {metric}. Known metrics: mssd, mspd, ar, ap")
    return EvaluationReport(metric, float(np.mean(recalls)), details)


def _finite_mean(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if len(finite) else float("nan")


def rotation_error_deg(est: Pose, gt: Pose) -> float:
    """Geodesic angle between two rotations in degrees."""
    cos = (np.trace(est.rotation.T @ gt.rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_error(est: Pose, gt: Pose) -> float:
    return float(np.linalg.norm(est.translation - gt.translation))


def pose_errors(est: Pose, gt: Pose, model: ObjectModel) -> Tuple[float, float]:
    """Smallest (rotation degrees, translation meters) error over the model's symmetries."""
    best = (np.inf, np.inf)
    for s in model.symmetries:
        g = gt.compose(s)
        cand = (rotation_error_deg(est, g), translation_error(est, g))
        if cand < best:
            best = cand
    return best
