"""Backscatter dB conversion and the 7-band radar stack per orbit pass.

Ascending and descending passes are processed independently because the
viewing geometry changes the backscatter of built structures.  Only one
polarization channel is expected per scene.  Temporal statistics are
computed in dB space and reuse the shared definitions in
:mod:`settlemap.features`:

    5 temporal statistics + COV of the temporal mean + scene count = 7 bands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError
from .features import FeatureStack, STAT_NAMES, cov_texture, temporal_statistics
from .grid import GeoTransform, Grid, TemporalStack

__all__ = [
    "PASSES",
    "RadarScene",
    "RadarFeatureStack",
    "to_decibel",
    "build_radar_stack",
]

PASSES = ("ascending", "descending")
RADAR_BAND_COUNT = 7


@dataclass
class RadarScene:
    """One radar acquisition: dB backscatter grid, orbit pass, timestamp."""

    backscatter: Grid
    orbit_pass: str
    timestamp: object = 0
    validity: Grid | None = None

    def __post_init__(self):
        if self.orbit_pass not in PASSES:
            raise ContractError(f"orbit pass must be one of {PASSES}, got {self.orbit_pass!r}")


class RadarFeatureStack(FeatureStack):
    """Feature stack with exactly the 7 radar bands for one orbit pass."""

    def __init__(self, bands, orbit_pass: str):
        super().__init__(bands)
        if len(self) != RADAR_BAND_COUNT:
            raise ContractError(
                f"radar stack must have {RADAR_BAND_COUNT} bands, got {len(self)}"
            )
        if orbit_pass not in PASSES:
            raise ContractError(f"orbit pass must be one of {PASSES}")
        self.orbit_pass = orbit_pass

    @property
    def scene_count(self) -> Grid:
        return self.band("count")

    @property
    def mean(self) -> Grid:
        return self.band("mean")


def to_decibel(linear: Grid) -> Grid:
    """Convert linear backscatter intensity to dB: 10*log10(x).

    Zero intensity has no dB representation and becomes nodata; negative
    intensities are rejected.
    """
    vals = linear.filled(np.nan)
    valid = linear.valid_mask
    if np.any(vals[valid] < 0):
        raise ContractError("linear backscatter intensities must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 10.0 * np.log10(vals)
    db[~valid | (vals == 0.0)] = np.nan
    return Grid(db, linear.transform, np.nan)


def build_radar_stack(
    scenes: list[RadarScene],
    orbit_pass: str,
    cov_window: int = 5,
    shape: tuple[int, int] | None = None,
    transform: GeoTransform | None = None,
) -> RadarFeatureStack:
    """Build the 7-band stack for one pass from dB-converted scenes.

    Scenes of the other pass are ignored.  With no scene of the requested
    pass the stack is still produced (statistics all nodata, count zero
    everywhere), taking its georeference from the remaining scenes or from
    the explicit ``shape``/``transform`` arguments.
    """
    if orbit_pass not in PASSES:
        raise ContractError(f"orbit pass must be one of {PASSES}, got {orbit_pass!r}")
    selected = [s for s in scenes if s.orbit_pass == orbit_pass]
    if not selected:
        if scenes:
            shape = scenes[0].backscatter.shape
            transform = scenes[0].backscatter.transform
        if shape is None or transform is None:
            raise DomainError(
                "no scenes at all and no explicit shape/transform for the empty stack"
            )
        return _empty_stack(shape, transform, orbit_pass)
    stack = TemporalStack(
        scenes=[s.backscatter for s in selected],
        timestamps=[s.timestamp for s in selected],
        validity=[s.validity for s in selected],
    )
    stats = temporal_statistics(stack)
    bands = {stat: stats.by_name(stat) for stat in STAT_NAMES}
    bands["cov"] = cov_texture(stats.mean, cov_window)
    bands["count"] = stats.count
    return RadarFeatureStack(bands, orbit_pass)


def _empty_stack(shape, transform, orbit_pass) -> RadarFeatureStack:
    nan = Grid(np.full(shape, np.nan), transform, np.nan)
    bands = {stat: nan for stat in STAT_NAMES}
    bands["cov"] = nan
    bands["count"] = Grid(np.zeros(shape, dtype=np.int32), transform, None)
    return RadarFeatureStack(bands, orbit_pass)
