"""Per-pixel temporal statistics, local-texture measures, and feature stacks.

Both sensor paths share the same statistics: for every pixel the temporal
maximum, minimum, mean, (population) standard deviation, and mean slope of
the valid observations, plus a valid-observation count.  The mean slope is
the average absolute difference between consecutive valid items of the
series, taken in acquisition order after dropping invalid observations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError
from .grid import GeoTransform, Grid, TemporalStack

__all__ = [
    "TemporalStatistics",
    "temporal_statistics",
    "cov_texture",
    "FeatureStack",
    "save_feature_stack",
    "load_feature_stack",
]

STAT_NAMES = ("max", "min", "mean", "std", "slope")


@dataclass(frozen=True)
class TemporalStatistics:
    """Per-pixel statistics of one temporal series; all grids NaN-nodata."""

    maximum: Grid
    minimum: Grid
    mean: Grid
    std: Grid
    mean_slope: Grid
    count: Grid  # int32, no nodata: 0 is a meaningful count

    def by_name(self, name: str) -> Grid:
        return {
            "max": self.maximum,
            "min": self.minimum,
            "mean": self.mean,
            "std": self.std,
            "slope": self.mean_slope,
            "count": self.count,
        }[name]


def temporal_statistics(stack: TemporalStack) -> TemporalStatistics:
    """Compute max/min/mean/std/mean-slope/count per pixel over valid observations.

    Pixels with no valid observation are nodata in every statistic; std and
    mean slope additionally need at least two valid observations.
    """
    if len(stack) == 0:
        raise DomainError("temporal statistics need at least one scene")
    series = stack.masked_values()
    valid = ~np.isnan(series)
    count = valid.sum(axis=0, dtype=np.int32)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN pixels are masked below
        vmax = np.nanmax(series, axis=0)
        vmin = np.nanmin(series, axis=0)
        vmean = np.nanmean(series, axis=0)
        vstd = np.nanstd(series, axis=0)
    none = count == 0
    for arr in (vmax, vmin, vmean):
        arr[none] = np.nan
    vstd[count < 2] = np.nan

    # mean slope over the compressed valid subsequence
    acc = np.zeros(stack.shape, dtype=np.float64)
    pairs = np.zeros(stack.shape, dtype=np.int32)
    prev = np.full(stack.shape, np.nan)
    for k in range(len(stack)):
        layer = series[k]
        both = valid[k] & ~np.isnan(prev)
        acc[both] += np.abs(layer[both] - prev[both])
        pairs[both] += 1
        prev = np.where(valid[k], layer, prev)
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = acc / pairs
    slope[pairs == 0] = np.nan

    tr = stack.transform
    make = lambda a: Grid(a, tr, np.nan)
    return TemporalStatistics(
        maximum=make(vmax),
        minimum=make(vmin),
        mean=make(vmean),
        std=make(vstd),
        mean_slope=make(slope),
        count=Grid(count, tr, None),
    )


def _windowed_sums(arr: np.ndarray, window: int) -> np.ndarray:
    """Sum of ``arr`` over the window centered at each cell, truncated at edges."""
    half = window // 2
    h, w = arr.shape
    c = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(arr, axis=0), axis=1, out=c[1:, 1:])
    rows = np.arange(h)
    cols = np.arange(w)
    r0 = np.clip(rows - half, 0, h)
    r1 = np.clip(rows + half + 1, 0, h)
    c0 = np.clip(cols - half, 0, w)
    c1 = np.clip(cols + half + 1, 0, w)
    return (c[r1[:, None], c1[None, :]] - c[r0[:, None], c1[None, :]]
            - c[r1[:, None], c0[None, :]] + c[r0[:, None], c0[None, :]])


def cov_texture(grid: Grid, window: int) -> Grid:
    """Local coefficient of variation: stddev / mean over an NxN neighborhood.

    Uses only non-nodata cells; edge pixels use the in-bounds part of the
    window.  A window with fewer than two valid cells, or a zero local
    mean, yields nodata.  The standard deviation is the population form.
    """
    if window % 2 == 0 or window < 3:
        raise ContractError(f"window must be an odd integer >= 3, got {window}")
    valid = grid.valid_mask
    vals = grid.filled(0.0)
    # shift by the global mean so constant patches give an exact zero variance
    shift = vals[valid].mean() if valid.any() else 0.0
    shifted = np.where(valid, vals - shift, 0.0)
    n = _windowed_sums(valid.astype(np.float64), window)
    s1 = _windowed_sums(shifted, window)
    s2 = _windowed_sums(shifted * shifted, window)
    with np.errstate(all="ignore"):
        mean_shifted = s1 / n
        var = np.maximum(s2 / n - mean_shifted * mean_shifted, 0.0)
        mean = mean_shifted + shift
        cov = np.sqrt(var) / mean
    cov[(n < 2) | (mean == 0.0) | ~np.isfinite(cov)] = np.nan
    return Grid(cov, grid.transform, np.nan)


class FeatureStack:
    """An ordered set of named, co-registered feature grids."""

    def __init__(self, bands: dict[str, Grid]):
        if not bands:
            raise ContractError("a feature stack needs at least one band")
        grids = list(bands.values())
        first = grids[0]
        for g in grids[1:]:
            if g.shape != first.shape or g.transform != first.transform:
                raise ContractError("feature stack bands are not co-registered")
        self._bands = dict(bands)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._bands)

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self._bands.values())).shape

    @property
    def transform(self) -> GeoTransform:
        return next(iter(self._bands.values())).transform

    def __len__(self) -> int:
        return len(self._bands)

    def band(self, name: str) -> Grid:
        try:
            return self._bands[name]
        except KeyError:
            raise KeyError(f"no band {name!r}; have {self.names}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._bands

    def items(self):
        return self._bands.items()

    def to_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(pixels x bands) float64 matrix plus a complete-row mask.

        Rows are in row-major pixel order; a row is complete when every
        band is valid there.
        """
        h, w = self.shape
        mat = np.empty((h * w, len(self._bands)), dtype=np.float64)
        complete = np.ones(h * w, dtype=bool)
        for k, grid in enumerate(self._bands.values()):
            mat[:, k] = grid.filled(np.nan).ravel()
        complete &= ~np.isnan(mat).any(axis=1)
        return mat, complete


def save_feature_stack(stack: FeatureStack, path) -> None:
    """Persist a feature stack as a compressed npz with a georeference record."""
    tr = stack.transform
    meta = {
        "names": list(stack.names),
        "transform": [tr.origin_lon, tr.origin_lat, tr.pixel_width, tr.pixel_height],
        "nodata": [None if g.nodata is None else ("nan" if _nan(g.nodata) else g.nodata)
                   for g in (stack.band(n) for n in stack.names)],
    }
    arrays = {f"band{k:03d}": stack.band(name).values for k, name in enumerate(stack.names)}
    np.savez_compressed(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                        **arrays)


def load_feature_stack(path) -> FeatureStack:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        tr = GeoTransform(*meta["transform"])
        bands = {}
        for k, name in enumerate(meta["names"]):
            nd = meta["nodata"][k]
            nd = np.nan if nd == "nan" else nd
            bands[name] = Grid(data[f"band{k:03d}"], tr, nd)
    return FeatureStack(bands)


def _nan(value) -> bool:
    return isinstance(value, float) and np.isnan(value)
