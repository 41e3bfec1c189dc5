"""
Configuration loader with Pydantic-based validation.

This module defines the structure of a PoseForge config.yaml file: one
section per pipeline stage, every field defaulting to the values used for
6D localization benchmarks. Distances that scale with the object are
expressed as fractions of the object diameter.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ScoringMode = Literal["feature_aware", "inlier_ratio"]


class DescriptorProviderSpec(BaseModel):
    """Which descriptor provider to use and its provider-specific parameters."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str = Field(
        default="synthetic-geometric", description="Registered provider kind (file, synthetic-geometric, oracle)"
    )
    params: Dict[str, Any] = Field(default_factory=dict, description="Provider parameters")


class GeoScaleConfig(BaseModel):
    """Multi-scale geometric descriptor layout."""

    radii: List[float] = Field(
        default_factory=lambda: [0.30, 0.40],
        description="Neighbourhood radii as fractions of the object diameter",
    )
    dims: List[int] = Field(
        default_factory=lambda: [32, 32], description="Descriptor dimensionality per scale"
    )

    @model_validator(mode="after")
    def check_scales(self) -> "GeoScaleConfig":
        if len(self.radii) != len(self.dims) or not self.radii:
            raise ValueError("radii and dims must be non-empty and of equal length")
        if any(not 0 < r <= 1 for r in self.radii):
            raise ValueError(f"radii must lie in (0, 1], got {self.radii}")
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        return self

    @property
    def total_dim(self) -> int:
        return int(sum(self.dims))


class QueryConfig(BaseModel):
    """Offline query feature extraction."""

    n_points: int = Field(default=5000, gt=0, description="Poisson-disk samples on the model")
    n_views: int = Field(default=162, ge=4, description="Template viewpoints")
    min_views: int = Field(default=18, gt=0, description="Views a point must be visible from")
    splat_px: int = Field(default=3, gt=0, description="Splat footprint in pixels")
    depth_tolerance: float = Field(
        default=0.01, gt=0, description="Visibility depth tolerance (fraction of diameter)"
    )
    view_radius_factor: float = Field(
        default=2.5, gt=0, description="Template sphere radius in object diameters"
    )
    image_size: int = Field(default=480, gt=0, description="Template image width and height")
    fov_deg: float = Field(default=60.0, gt=0, lt=180, description="Template vertical FOV")


class TargetConfig(BaseModel):
    """Online target feature extraction."""

    grid: int = Field(default=16, gt=0, description="Patch grid size per side")
    dense_count: int = Field(default=3000, gt=0, description="Points kept in the dense cloud")


class MatchingConfig(BaseModel):
    """Correspondence search."""

    k: int = Field(default=10, ge=1, description="Nearest query neighbours per target point")


class RansacConfig(BaseModel):
    """Coarse registration."""

    iterations: int = Field(default=10000, gt=0)
    tau_inlier: float = Field(default=0.03, gt=0, description="Fraction of diameter")
    edge_ratio_tol: float = Field(default=0.15, gt=0, lt=1)
    max_pair_distance: float = Field(default=1.0, gt=0, description="Fraction of diameter")
    scoring: ScoringMode = Field(default="feature_aware")
    seed: int = Field(default=0, ge=0)
    chunk_size: int = Field(default=256, gt=0, description="Hypotheses scored per batch")


class IcpConfig(BaseModel):
    """Point-to-point ICP refinement."""

    max_iterations: int = Field(default=50, gt=0)
    tau_icp: float = Field(default=0.03, gt=0, description="Fraction of diameter")
    convergence_eps: float = Field(
        default=1e-5, gt=0, description="Residual change threshold (fraction of diameter)"
    )
    support: Literal["visible", "all"] = Field(
        default="visible",
        description="Query points associated during ICP: those seen inside the mask at the coarse pose, or all",
    )
    mode: Literal["point_to_point"] = "point_to_point"


class ScoreWeights(BaseModel):
    """Exponents of the final score and which similarity terms enter it."""

    alpha: float = Field(default=1.0, ge=0)
    beta: float = Field(default=1.0, ge=0)
    gamma: float = Field(default=1.0, ge=0)
    rank_scoring: ScoringMode = Field(
        default="feature_aware",
        description="inlier_ratio replaces both feature terms with inlier ratios",
    )

    @field_validator("alpha", "beta", "gamma")
    @classmethod
    def check_finite(cls, v: float) -> float:
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("score weights must be finite")
        return v


class ModeConfig(BaseModel):
    """Localization / detection mask policy."""

    mode: Literal["localization", "detection"] = "localization"
    n_instances: int = Field(default=1, ge=0, description="Known instance count N")
    m_masks: Optional[int] = Field(
        default=None, ge=1, description="Masks kept per source (default N+1 or 100)"
    )
    tau_mask: float = Field(default=0.4, description="Detection confidence cut")
    nms_radius: float = Field(default=0.05, gt=0, description="Fraction of diameter")

    @model_validator(mode="after")
    def apply_mode_defaults(self) -> "ModeConfig":
        if self.m_masks is None:
            self.m_masks = self.n_instances + 1 if self.mode == "localization" else 100
        if self.mode == "localization" and self.m_masks < self.n_instances:
            raise ValueError(
                f"m_masks ({self.m_masks}) must be >= n_instances ({self.n_instances})"
            )
        if self.mode == "detection" and not 0.0 <= self.tau_mask <= 1.0:
            raise ValueError(f"tau_mask must lie in [0, 1], got {self.tau_mask}")
        return self


class MetricConfig(BaseModel):
    """Recall threshold sweep."""

    thresholds: List[float] = Field(..., min_length=1)

    @field_validator("thresholds")
    @classmethod
    def check_increasing(cls, v: List[float]) -> List[float]:
        if any(t <= 0 for t in v):
            raise ValueError("thresholds must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("thresholds must be strictly increasing")
        return v

    @classmethod
    def mssd_default(cls) -> "MetricConfig":
        """0.05 to 0.50 of the diameter in steps of 0.05."""
        return cls(thresholds=[round(0.05 * i, 2) for i in range(1, 11)])

    @classmethod
    def mspd_default(cls) -> "MetricConfig":
        """5 to 50 pixels in steps of 5."""
        return cls(thresholds=[5.0 * i for i in range(1, 11)])


class PoseForgeConfig(BaseModel):
    """Main configuration model for PoseForge."""

    model_config = ConfigDict(extra="forbid")

    provider: DescriptorProviderSpec = Field(default_factory=DescriptorProviderSpec)
    geo: GeoScaleConfig = Field(default_factory=GeoScaleConfig)
    query: QueryConfig = Field(default_factory=QueryConfig)
    target: TargetConfig = Field(default_factory=TargetConfig)
    matching: MatchingConfig = Field(default_factory=MatchingConfig)
    ransac: RansacConfig = Field(default_factory=RansacConfig)
    icp: IcpConfig = Field(default_factory=IcpConfig)
    weights: ScoreWeights = Field(default_factory=ScoreWeights)
    mode: ModeConfig = Field(default_factory=ModeConfig)
    workers: int = Field(default=1, ge=1, description="Masks processed concurrently")
    seed: int = Field(default=0, ge=0, description="Seed for target subsampling")

    @model_validator(mode="after")
    def check_query_views(self) -> "PoseForgeConfig":
        if self.query.min_views > self.query.n_views:
            raise ValueError(
                f"min_views ({self.query.min_views}) exceeds n_views ({self.query.n_views})"
            )
        return self

    @classmethod
    def from_yaml(cls, config_path: Union[str, Path]) -> "PoseForgeConfig":
        """
        Load configuration from a YAML file.

        Parameters
        ----------
        config_path : str or Path
            Path to the YAML configuration file.

        Returns
        -------
        PoseForgeConfig
            Validated configuration object.

        Raises
        ------
        FileNotFoundError
            If the config file doesn't exist.
        ValueError
            If the config file is invalid.
        """
        config_path = Path(config_path)
        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        with open(config_path, "r") as f:
            config_dict = yaml.safe_load(f) or {}

        if not isinstance(config_dict, dict):
            raise ValueError("Invalid configuration: top level must be a mapping")

        try:
            return cls(**config_dict)
        except Exception as e:
            raise ValueError(f"Invalid configuration: {e}") from e

    def with_overrides(self, overrides: Dict[str, Dict[str, Any]]) -> "PoseForgeConfig":
        """
        Return a copy with per-section overrides applied and re-validated.

        ``None`` values are ignored so CLI options left unset keep the
        configured value.
        """
        data = self.model_dump(exclude={"provider": {"params"}})
        data["provider"]["params"] = dict(self.provider.params)
        for section, values in overrides.items():
            clean = {k: v for k, v in values.items() if v is not None}
            if isinstance(data.get(section), dict):
                data[section].update(clean)
                if section == "mode" and {"mode", "n_instances"} & clean.keys() and "m_masks" not in clean:
                    data[section]["m_masks"] = None
            elif clean:
                raise ValueError(f"Unknown configuration section: {section}")
        return PoseForgeConfig(**data)


class ConfigLoader:
    """
    Configuration loader utility class.

    Provides methods for loading and validating PoseForge configurations.
    """

    @staticmethod
    def load(config_path: Optional[Union[str, Path]] = None) -> PoseForgeConfig:
        """
        Load and validate a configuration file.

        Parameters
        ----------
        config_path : str or Path, optional
            Path to the YAML configuration file. Defaults apply when omitted.

        Returns
        -------
        PoseForgeConfig
            Validated configuration object.
        """
        if config_path is None:
            return PoseForgeConfig()
        return PoseForgeConfig.from_yaml(config_path)
