"""Declarative pipeline configuration.

Every tunable constant of the processing chain lives here with its
production default, so call sites never hard-code magic numbers and a
single YAML document reproduces a map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .svm import HyperGrid

__all__ = [
    "FeatureConfig",
    "SelectionConfig",
    "EnsembleConfig",
    "GridSearchConfig",
    "PostClassConfig",
    "ExportConfig",
    "PipelineConfig",
    "load_config",
    "save_config",
]


@dataclass
class FeatureConfig:
    optical_cov_window: int = 3
    radar_cov_window: int = 5
    max_cloud_percent: float = 60.0


@dataclass
class SelectionConfig:
    min_clear_count: int = 5
    min_radar_scenes: int = 5
    settlement_db_gate: float = -7.0
    non_settlement_db_gate: float = -11.0
    max_slope_deg: float = 10.0


@dataclass
class EnsembleConfig:
    members: int = 20
    vote_threshold: int = 11
    samples_per_class: int = 500
    folds: int = 5
    kkt_tol: float = 1e-3
    max_iterations: int = 200_000


@dataclass
class GridSearchConfig:
    c_exponent_min: int = 0
    c_exponent_max: int = 13
    gamma_step: float = 0.1
    gamma_steps: int = 20

    def hyper_grid(self) -> HyperGrid:
        return HyperGrid(
            c_values=tuple(
                float(2 ** i) for i in range(self.c_exponent_min, self.c_exponent_max + 1)
            ),
            gamma_values=tuple(
                self.gamma_step * j for j in range(1, self.gamma_steps + 1)
            ),
        )


@dataclass
class PostClassConfig:
    enabled: bool = True
    agreement_min_layers: int = 2
    agreement_overlap: float = 0.30
    exclusion_overlap: float = 0.30
    ndvi_limit: float = 0.6
    backscatter_limit_db: float = -11.0
    connectivity: int = 8


@dataclass
class ExportConfig:
    encoding: str = "binary-mask"
    downsample_factors: list[int] = field(default_factory=list)


@dataclass
class PipelineConfig:
    """Complete pipeline configuration; defaults give the production constants."""

    seed: int = 0
    workers: int = 1
    unit_size_deg: float = 1.0
    thresholds: str = "demo"
    features: FeatureConfig = field(default_factory=FeatureConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    grid_search: GridSearchConfig = field(default_factory=GridSearchConfig)
    postclass: PostClassConfig = field(default_factory=PostClassConfig)
    export: ExportConfig = field(default_factory=ExportConfig)

    def __post_init__(self):
        e = self.ensemble
        if e.members < 1 or not (1 <= e.vote_threshold <= e.members):
            raise ConfigError(
                f"vote threshold {e.vote_threshold} incompatible with {e.members} members"
            )
        if e.samples_per_class < e.folds:
            raise ConfigError("samples_per_class must be at least the fold count")
        if self.features.optical_cov_window % 2 == 0 or self.features.radar_cov_window % 2 == 0:
            raise ConfigError("texture windows must be odd")
        if self.postclass.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")
        if self.export.encoding not in ("binary-mask", "percent", "float"):
            raise ConfigError(f"unknown export encoding {self.export.encoding!r}")
        if any(f < 2 for f in self.export.downsample_factors):
            raise ConfigError("downsample factors must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    def thresholds_path(self, relative_to: Path | None = None) -> Path:
        """Resolve the threshold-table location; ``demo`` means the bundled table."""
        if self.thresholds == "demo":
            return Path(__file__).parent / "data" / "demo_thresholds.csv"
        path = Path(self.thresholds)
        if not path.is_absolute() and relative_to is not None:
            path = relative_to / path
        return path


_SECTIONS = {
    "features": FeatureConfig,
    "selection": SelectionConfig,
    "ensemble": EnsembleConfig,
    "grid_search": GridSearchConfig,
    "postclass": PostClassConfig,
    "export": ExportConfig,
}


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw or {})
    kwargs = {}
    for section, cls in _SECTIONS.items():
        body = raw.pop(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        known = cls.__dataclass_fields__
        unknown = set(body) - set(known)
        if unknown:
            raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
        kwargs[section] = cls(**body)
    top_fields = {"seed", "workers", "unit_size_deg", "thresholds"}
    unknown = set(raw) - top_fields
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    return PipelineConfig(**raw, **kwargs)


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return config_from_dict(raw)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
