"""Spectral indices and the 37-band optical temporal-feature stack.

Six normalized-difference indices are computed per scene, each index
series is reduced to five temporal statistics, a 3x3 coefficient of
variation is added for each temporal-mean index, and the per-pixel count
of clear observations completes the stack:

    6 indices x 5 statistics + 6 COV + 1 count = 37 bands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError
from .features import FeatureStack, STAT_NAMES, cov_texture, temporal_statistics
from .grid import Grid, TemporalStack, _require_coregistered

__all__ = [
    "BAND_NAMES",
    "OPTICAL_INDICES",
    "SpectralScene",
    "OpticalFeatureStack",
    "spectral_index",
    "build_optical_stack",
]

BAND_NAMES = ("blue", "green", "red", "nir", "swir1", "swir2")

# index -> (minuend band, subtrahend band): value = (a - b) / (a + b)
INDEX_OPERANDS = {
    "ndbi": ("swir1", "nir"),
    "mndwi": ("green", "nir"),
    "ndvi": ("nir", "red"),
    "ndmir": ("swir1", "swir2"),
    "ndrb": ("red", "blue"),
    "ndgb": ("green", "blue"),
}
OPTICAL_INDICES = tuple(INDEX_OPERANDS)

OPTICAL_BAND_COUNT = 37


@dataclass
class SpectralScene:
    """One multispectral acquisition: six bands plus a clear-sky validity mask.

    ``validity`` is nonzero where the pixel is free of clouds, cloud
    shadows, and snow; ``cloud_percent`` is the scene-level cloud cover
    reported by the acquisition metadata.
    """

    blue: Grid
    green: Grid
    red: Grid
    nir: Grid
    swir1: Grid
    swir2: Grid
    validity: Grid | None = None
    timestamp: object = 0
    cloud_percent: float | None = None

    def __post_init__(self):
        grids = [self.band(n) for n in BAND_NAMES]
        if self.validity is not None:
            grids.append(self.validity)
        _require_coregistered(grids, "spectral scene")

    def band(self, name: str) -> Grid:
        if name not in BAND_NAMES:
            raise ContractError(f"unknown band {name!r}")
        return getattr(self, name)

    @property
    def shape(self):
        return self.blue.shape

    @property
    def transform(self):
        return self.blue.transform

    def clear_mask(self) -> np.ndarray:
        """True where the scene is valid in every band and cloud-free."""
        ok = np.ones(self.shape, dtype=bool)
        for name in BAND_NAMES:
            ok &= self.band(name).valid_mask
        if self.validity is not None:
            ok &= self.validity.values != 0
        return ok


class OpticalFeatureStack(FeatureStack):
    """Feature stack with exactly the 37 optical bands."""

    def __init__(self, bands):
        super().__init__(bands)
        if len(self) != OPTICAL_BAND_COUNT:
            raise ContractError(
                f"optical stack must have {OPTICAL_BAND_COUNT} bands, got {len(self)}"
            )

    @property
    def clear_count(self) -> Grid:
        return self.band("count")

    def index_mean(self, index: str) -> Grid:
        return self.band(f"{index}_mean")


def spectral_index(scene: SpectralScene, index: str) -> Grid:
    """Evaluate one normalized-difference index, NaN where undefined.

    Pixels masked by the scene validity, nodata in either operand band,
    or with a zero denominator become nodata rather than a substitute
    value.
    """
    if index not in INDEX_OPERANDS:
        raise ContractError(f"unknown spectral index {index!r}; have {OPTICAL_INDICES}")
    a_name, b_name = INDEX_OPERANDS[index]
    a, b = scene.band(a_name), scene.band(b_name)
    av, bv = a.filled(np.nan), b.filled(np.nan)
    num = av - bv
    den = av + bv
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    bad = ~a.valid_mask | ~b.valid_mask | (den == 0.0)
    if scene.validity is not None:
        bad |= scene.validity.values == 0
    out[bad] = np.nan
    return Grid(out, scene.transform, np.nan)


def build_optical_stack(scenes: list[SpectralScene], cov_window: int = 3) -> OpticalFeatureStack:
    """Build the 37-band optical stack from co-registered, pre-filtered scenes.

    Callers are expected to have dropped scenes whose metadata cloud cover
    exceeds the ingestion gate; no per-scene filtering happens here.
    """
    if not scenes:
        raise DomainError("cannot build an optical stack from zero scenes")
    _require_coregistered([s.blue for s in scenes], "optical scenes")

    transform = scenes[0].transform
    clear = np.zeros(scenes[0].shape, dtype=np.int32)
    for scene in scenes:
        clear += scene.clear_mask()

    bands: dict[str, Grid] = {}
    cov_bands: dict[str, Grid] = {}
    for index in OPTICAL_INDICES:
        stack = TemporalStack(
            scenes=[spectral_index(s, index) for s in scenes],
            timestamps=[s.timestamp for s in scenes],
        )
        stats = temporal_statistics(stack)
        for stat in STAT_NAMES:
            bands[f"{index}_{stat}"] = stats.by_name(stat)
        cov_bands[f"{index}_cov"] = cov_texture(stats.mean, cov_window)
    bands.update(cov_bands)
    bands["count"] = Grid(clear, transform, None)
    return OpticalFeatureStack(bands)
