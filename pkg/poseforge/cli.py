"""
Command-line interface for PoseForge.

Provides the ``pose-forge`` commands: ``prepare`` builds a query feature
cloud offline, ``estimate`` runs the pipeline on a scene directory,
``eval`` scores predictions, ``synth`` writes synthetic scenes.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional

import typer
from rich.console import Console
from rich.markup import escape
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from poseforge.core.config_loader import ConfigLoader, PoseForgeConfig
from poseforge.core.errors import FileMissing, PoseForgeError
from poseforge.core.pipeline import PoseEstimationPipeline, QueryBundle
from poseforge.core.provenance import ProvenanceTracker

app = typer.Typer(
    name="pose-forge",
    help="PoseForge: training-free 6D object pose estimation",
    add_completion=False,
)
console = Console()

MODES = {"loc": "localization", "localization": "localization", "det": "detection", "detection": "detection"}
SCORINGS = {"feature": "feature_aware", "feature_aware": "feature_aware", "inlier": "inlier_ratio", "inlier_ratio": "inlier_ratio"}
HANDLED_ERRORS = (PoseForgeError, ValueError, OSError, KeyError)


def _fail(error: Exception, verbose: bool) -> None:
    console.print(f"[red]Error: {escape(str(error))}[/red]")
    if verbose:
        import traceback

        console.print("\n[red]Traceback:[/red]")
        console.print(traceback.format_exc())
    raise typer.Exit(1)


def _choice(value: Optional[str], table: Dict[str, str], name: str) -> Optional[str]:
    if value is None:
        return None
    if value not in table:
        raise typer.BadParameter(f"{name} must be one of {sorted(set(table))}")
    return table[value]


def _spinner(description: str):
    progress = Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True,
    )
    progress.add_task(description, total=None)
    return progress


@app.command()
def prepare(
    model: str = typer.Option(..., "--model", help="Object mesh (.ply)"),
    out: str = typer.Option(..., "--out", "-o", help="Output feature cloud (.fcl)"),
    provider: Optional[str] = typer.Option(
        None, "--provider", help="Descriptor provider: file, synthetic-geometric or oracle"
    ),
    params: Optional[str] = typer.Option(None, "--params", help="Provider parameters as JSON"),
    points: Optional[int] = typer.Option(None, "--points", help="Poisson-disk samples"),
    views: Optional[int] = typer.Option(None, "--views", help="Template viewpoints"),
    min_views: Optional[int] = typer.Option(None, "--min-views", help="Views a point must be visible from"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed"),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Configuration YAML file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Build the fused query feature cloud of an object.

    Writes the cloud, its PCA projection (``<out>.pca.npz``) and a
    provenance log next to it.
    """
    from poseforge.io.feature_files import pca_sidecar_path, save_feature_cloud, save_pca
    from poseforge.io.handlers import DataHandler

    try:
        cfg = ConfigLoader.load(config)
        provider_section = {"kind": provider}
        if params:
            provider_section["params"] = {**cfg.provider.params, **json.loads(params)}
        cfg = cfg.with_overrides(
            {
                "provider": provider_section,
                "query": {"n_points": points, "n_views": views, "min_views": min_views},
            }
        )
        if seed is not None:
            cfg = PoseForgeConfig(**{**cfg.model_dump(), "seed": seed})

        provenance = ProvenanceTracker()
        handler = DataHandler(provenance)
        object_model = handler.load_object_model(model)
        pipeline = PoseEstimationPipeline(cfg, provenance)
        with _spinner("Building query features..."):
            bundle = pipeline.prepare_query(object_model, Path(model).stem)

        out_path = Path(out)
        save_feature_cloud(bundle.cloud, out_path)
        save_pca(bundle.pca, pca_sidecar_path(out_path))
        provenance.log(step="io", action="save_query", details={"points": len(bundle.cloud)}, file_used=str(out_path))
        provenance.save(out_path.parent / "provenance.json")

        console.print(f"[green]✓[/green] Query cloud: {len(bundle.cloud):,} points, dim {bundle.cloud.dim}")
        console.print(f"  Output file: {out_path}")
        console.print(f"  PCA sidecar: {pca_sidecar_path(out_path)}")
        if bundle.pca.rank < bundle.pca.d_out:
            console.print(f"[yellow]PCA rank {bundle.pca.rank} < {bundle.pca.d_out}, padded with zeros[/yellow]")
    except HANDLED_ERRORS as e:
        _fail(e, verbose)


def _load_query(handler, scene_dir: Path, object_id: str, model: Optional[str], query: Optional[str]) -> QueryBundle:
    from poseforge.io.feature_files import load_feature_cloud, load_pca, pca_sidecar_path

    model_path = Path(model) if model else scene_dir / "models" / f"{object_id}.ply"
    query_path = Path(query) if query else scene_dir / "features" / f"{object_id}.fcl"
    if not query_path.exists():
        raise FileMissing(f"Query feature cloud not found: {query_path} (run 'pose-forge prepare')")
    return QueryBundle(
        object_id=object_id,
        model=handler.load_object_model(model_path),
        cloud=load_feature_cloud(query_path),
        pca=load_pca(pca_sidecar_path(query_path)),
    )


@app.command()
def estimate(
    scene: str = typer.Option(..., "--scene", "-s", help="Scene directory"),
    object_id: str = typer.Option(..., "--object", help="Object id"),
    out: str = typer.Option(..., "--out", "-o", help="Output predictions CSV"),
    model: Optional[str] = typer.Option(None, "--model", help="Mesh (default <scene>/models/<object>.ply)"),
    query: Optional[str] = typer.Option(None, "--query", help="Query cloud (default <scene>/features/<object>.fcl)"),
    mode: Optional[str] = typer.Option(None, "--mode", help="loc or det"),
    n: Optional[int] = typer.Option(None, "--n", help="Known instance count (localization)"),
    m: Optional[int] = typer.Option(None, "--m", help="Masks kept per source"),
    tau_mask: Optional[float] = typer.Option(None, "--tau-mask", help="Detection confidence cut"),
    k: Optional[int] = typer.Option(None, "--k", help="Nearest query neighbours per target point"),
    iters: Optional[int] = typer.Option(None, "--iters", help="RANSAC iterations"),
    tau: Optional[float] = typer.Option(None, "--tau", help="Inlier threshold (fraction of diameter)"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Coarse score exponent"),
    beta: Optional[float] = typer.Option(None, "--beta", help="Fine score exponent"),
    gamma: Optional[float] = typer.Option(None, "--gamma", help="ICP score exponent"),
    scoring: Optional[str] = typer.Option(None, "--scoring", help="RANSAC scoring: feature or inlier"),
    rank_scoring: Optional[str] = typer.Option(None, "--rank-scoring", help="Final score terms: feature or inlier"),
    nms_radius: Optional[float] = typer.Option(None, "--nms-radius", help="NMS radius (fraction of diameter)"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Masks processed concurrently"),
    seed: Optional[int] = typer.Option(None, "--seed", help="RANSAC and subsampling seed"),
    no_timing: bool = typer.Option(False, "--no-timing", help="Omit the time_ms column"),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Configuration YAML file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Estimate the poses of one object in a scene directory.

    Masks are read from ``<scene>/masks``; the query cloud must have been
    prepared. Poses are written as CSV, one row per pose, with
    ``provenance.json`` beside it.
    """
    from poseforge.io.handlers import DataHandler

    try:
        cfg = ConfigLoader.load(config)
        overrides = {
            "mode": {
                "mode": _choice(mode, MODES, "--mode"),
                "n_instances": n,
                "m_masks": m,
                "tau_mask": tau_mask,
                "nms_radius": nms_radius,
            },
            "matching": {"k": k},
            "ransac": {"iterations": iters, "tau_inlier": tau, "scoring": _choice(scoring, SCORINGS, "--scoring"), "seed": seed},
            "icp": {"tau_icp": tau},
            "weights": {
                "alpha": alpha,
                "beta": beta,
                "gamma": gamma,
                "rank_scoring": _choice(rank_scoring, SCORINGS, "--rank-scoring"),
            },
        }
        cfg = cfg.with_overrides(overrides)
        top_level = {key: v for key, v in (("workers", workers), ("seed", seed)) if v is not None}
        if top_level:
            cfg = PoseForgeConfig(**{**cfg.model_dump(), **top_level})

        provenance = ProvenanceTracker()
        handler = DataHandler(provenance)
        scene_dir = Path(scene)
        scene_bundle = handler.load_scene(scene_dir)
        bundle = _load_query(handler, scene_dir, object_id, model, query)

        if cfg.provider.kind == "oracle":
            truth = handler.load_ground_truth(scene_dir / "gt.json")
            params = {
                **cfg.provider.params,
                "model": bundle.model,
                "poses": [g.pose for g in truth if g.object_id == object_id],
            }
            cfg = cfg.model_copy(update={"provider": cfg.provider.model_copy(update={"params": params})})

        pipeline = PoseEstimationPipeline(cfg, provenance)
        with _spinner(f"Estimating poses on {len(scene_bundle.masks)} masks..."):
            results = pipeline.run_scene(scene_bundle, [bundle])

        frame = handler.predictions_frame(scene_bundle.scene_id, results, timing=not no_timing)
        out_path = Path(out)
        handler.save_predictions(frame, out_path)
        provenance.save(out_path.parent / "provenance.json")

        result = results[0]
        table = Table(title=f"{object_id} in {scene_bundle.scene_id}")
        for column in ("mask", "final", "coarse", "fine", "icp"):
            table.add_column(column, justify="right")
        for p in result.poses:
            table.add_row(str(p.mask_ref), f"{p.s_final:.4f}", f"{p.s_coarse:.4f}", f"{p.s_fine:.4f}", f"{p.s_icp:.4f}")
        console.print(table)
        console.print(f"Poses: {len(result.poses)}  Skipped masks: {len(result.skipped)}")
        if result.shortfall:
            console.print(f"[yellow]{result.shortfall} instance(s) without a pose[/yellow]")
        if verbose:
            for s in result.skipped:
                console.print(f"  mask {s.mask_ref} ({s.source_id}): {s.reason}: {s.message}")
        console.print(f"\nOutput file: {out_path}")
    except HANDLED_ERRORS as e:
        _fail(e, verbose)


def _scene_dirs(gt_dir: Path) -> List[Path]:
    if (gt_dir / "gt.json").exists():
        return [gt_dir]
    scenes = sorted(p for p in gt_dir.iterdir() if p.is_dir() and (p / "gt.json").exists())
    if not scenes:
        raise FileMissing(f"No gt.json found in {gt_dir} or its subdirectories")
    return scenes


@app.command(name="eval")
def evaluate_command(
    pred: str = typer.Option(..., "--pred", "-p", help="Predictions CSV"),
    gt: str = typer.Option(..., "--gt", "-g", help="Scene directory or directory of scenes"),
    metric: str = typer.Option("ar", "--metric", help="mssd, mspd, ar or ap"),
    models: Optional[str] = typer.Option(None, "--models", help="Model directory (default <scene>/models)"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Score predictions against ground truth."""
    from poseforge.evalkit.metrics import Annotation, Prediction, evaluate
    from poseforge.io.handlers import DataHandler, frame_poses

    try:
        handler = DataHandler()
        frame = handler.load_predictions(pred)
        predictions = [
            Prediction(str(row.scene_id), str(row.object_id), pose, float(row.score_final))
            for row, pose in zip(frame.itertuples(index=False), frame_poses(frame))
        ]

        annotations, object_models, cameras = [], {}, {}
        for scene_dir in _scene_dirs(Path(gt)):
            cameras[scene_dir.name], _ = handler.load_camera(scene_dir / "camera.json")
            for record in handler.load_ground_truth(scene_dir / "gt.json"):
                annotations.append(Annotation(scene_dir.name, record.object_id, record.pose))
                if record.object_id not in object_models:
                    model_dir = Path(models) if models else scene_dir / "models"
                    object_models[record.object_id] = handler.load_object_model(
                        model_dir / f"{record.object_id}.ply"
                    )

        report = evaluate(predictions, annotations, object_models, cameras, metric)
        table = Table(title=f"Evaluation ({len(predictions)} predictions, {len(annotations)} annotations)")
        table.add_column("metric")
        table.add_column("value", justify="right")
        table.add_row(report.metric, f"{report.value:.4f}")
        for key, value in report.details.items():
            table.add_row(key, f"{value:.4f}")
        console.print(table)
    except HANDLED_ERRORS as e:
        _fail(e, verbose)


@app.command()
def synth(
    out: str = typer.Option(..., "--out", "-o", help="Output scene directory"),
    model: Optional[str] = typer.Option(None, "--model", help="Mesh (.ply); default a trimesh primitive"),
    shape: str = typer.Option("box", "--shape", help="Primitive when no mesh is given: box, capsule or icosphere"),
    size: float = typer.Option(0.1, "--size", help="Primitive size in meters"),
    object_id: str = typer.Option("obj", "--object", help="Object id"),
    instances: int = typer.Option(1, "--instances", "-n", help="Instances per scene"),
    scenes: int = typer.Option(1, "--scenes", help="Number of scenes"),
    occlusion: float = typer.Option(0.0, "--occlusion", help="Occluded fraction of each mask"),
    noise: float = typer.Option(0.0, "--noise", help="Depth noise sigma (fraction of diameter)"),
    outliers: float = typer.Option(0.0, "--outliers", help="Background masks per instance"),
    seed: int = typer.Option(0, "--seed", help="Scene seed"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Write synthetic scenes with ground truth in the scene directory layout."""
    from poseforge.evalkit.synth import SynthSceneSpec, default_camera, generate_scene, layout_poses
    from poseforge.io.handlers import DataHandler

    try:
        handler = DataHandler()
        object_model = handler.load_object_model(model) if model else primitive_model(shape, size)
        camera = default_camera()
        root = Path(out)
        for i in range(scenes):
            scene_dir = root if scenes == 1 else root / f"{i:06d}"
            spec = SynthSceneSpec(
                model=object_model,
                gt_poses=layout_poses(object_model, instances, camera, seed=seed + i),
                camera=camera,
                occlusion_fraction=occlusion,
                depth_noise_sigma=noise * object_model.diameter,
                outlier_mask_fraction=outliers,
                seed=seed + i,
                object_id=object_id,
                scene_id=scene_dir.name,
            )
            scene_bundle, truth = generate_scene(spec)
            handler.save_scene(scene_bundle, scene_dir)
            handler.save_object_model(object_model, scene_dir / "models" / f"{object_id}.ply")
            handler.save_ground_truth(truth.poses, scene_dir / "gt.json")
            if verbose:
                console.print(f"[green]✓[/green] {scene_dir}: {len(scene_bundle.masks)} masks")
        console.print(f"[green]✓[/green] Wrote {scenes} scene(s) to {root}")
    except HANDLED_ERRORS as e:
        _fail(e, verbose)


def primitive_model(shape: str, size: float):
    """Object model from a trimesh primitive, centered at the origin."""
    import trimesh

    from poseforge.core.types import ObjectModel

    if shape == "box":
        mesh = trimesh.creation.box(extents=[size, 0.7 * size, 0.4 * size])
    elif shape == "capsule":
        mesh = trimesh.creation.capsule(height=size, radius=0.25 * size)
    elif shape == "icosphere":
        mesh = trimesh.creation.icosphere(subdivisions=3, radius=size / 2)
    else:
        raise ValueError(f"Unknown shape: {shape}. Known shapes: box, capsule, icosphere")
    return ObjectModel.from_mesh(mesh.vertices, mesh.faces)


@app.command()
def validate(
    config: str = typer.Option(..., "--config", "-c", help="Path to the configuration YAML file"),
):
    """
    Validate a configuration file without running the pipeline.

    This command checks if the configuration file is valid and
    displays a summary of the effective settings.
    """
    config_path = Path(config)

    if not config_path.exists():
        console.print(f"[red]Error: Configuration file not found: {config_path}[/red]")
        raise typer.Exit(1)

    try:
        cfg = ConfigLoader.load(config_path)
        console.print("[green]✓[/green] Configuration file is valid!")
        console.print("\nConfiguration summary:")
        console.print(f"  Provider: {cfg.provider.kind}")
        console.print(f"  Query: {cfg.query.n_points} points, {cfg.query.n_views} views, min {cfg.query.min_views}")
        console.print(f"  Matching: k={cfg.matching.k}")
        console.print(f"  RANSAC: {cfg.ransac.iterations} iterations, tau={cfg.ransac.tau_inlier}, scoring={cfg.ransac.scoring}")
        console.print(f"  Weights: alpha={cfg.weights.alpha}, beta={cfg.weights.beta}, gamma={cfg.weights.gamma}")
        console.print(f"  Mode: {cfg.mode.mode}, N={cfg.mode.n_instances}, M={cfg.mode.m_masks}")
    except HANDLED_ERRORS as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise typer.Exit(1)


@app.command()
def version():
    """Display the PoseForge version."""
    from poseforge import __version__

    console.print(f"PoseForge version {__version__}")


def main():
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
