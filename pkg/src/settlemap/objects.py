"""Object-based post-classification: reference masks, segmentation, removal rules.

The optical- and radar-derived classification maps are segmented into
connected objects, objects matching any removal rule are deleted, and
the survivors of both maps are merged into the final settlement mask.
Removal rules:

* R1: the object overlaps the settlement agreement mask on less than 30%
  of its pixels and, concurrently, the exclusion mask on more than 30%;
* R2: the zonal mean of the temporal-mean NDVI exceeds 0.6;
* R3: the zonal mean of the temporal-mean backscatter of either orbit
  pass (where that pass observed the object) is below -11 dB.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _ccl
from .errors import ConfigError, ContractError
from .grid import Grid, is_binary, _require_coregistered

__all__ = [
    "AGREEMENT_ROLES",
    "EXCLUSION_ROLES",
    "ReferenceLayerSet",
    "agreement_mask",
    "exclusion_mask",
    "ObjectSet",
    "connected_components",
    "FilterOutcome",
    "filter_objects",
    "merge_maps",
]

AGREEMENT_ROLES = ("DLR-RC", "CIL", "OSM-S", "OSM-R", "GL30-S", "NLCD")
EXCLUSION_ROLES = ("DLR-RM", "GLC30-W", "GLC30-WL")
_ROLE_ALIASES = {"GLC30-S": "GL30-S"}


def canonical_role(role: str) -> str:
    role = role.strip().upper()
    return _ROLE_ALIASES.get(role, role)


@dataclass
class ReferenceLayerSet:
    """Binary reference rasters keyed by role, split into agreement and exclusion."""

    agreement: dict[str, Grid] = field(default_factory=dict)
    exclusion: dict[str, Grid] = field(default_factory=dict)

    def __post_init__(self):
        for role in self.agreement:
            if role not in AGREEMENT_ROLES:
                raise ConfigError(f"unknown agreement layer role {role!r}")
        for role in self.exclusion:
            if role not in EXCLUSION_ROLES:
                raise ConfigError(f"unknown exclusion layer role {role!r}")
        layers = list(self.agreement.values()) + list(self.exclusion.values())
        if layers:
            _require_coregistered(layers, "reference layers")
        for grid in layers:
            if not is_binary(grid):
                raise ContractError("reference layers must be binary {0, 1} masks")

    def add(self, role: str, grid: Grid) -> None:
        role = canonical_role(role)
        if role in AGREEMENT_ROLES:
            target = self.agreement
        elif role in EXCLUSION_ROLES:
            target = self.exclusion
        else:
            raise ConfigError(f"unknown reference layer role {role!r}")
        if role in target:
            raise ConfigError(f"reference layer role {role!r} supplied twice")
        target[role] = grid
        self.__post_init__()


def agreement_mask(layers: ReferenceLayerSet, min_positive: int = 2) -> Grid:
    """Positive where at least ``min_positive`` of the agreement layers agree."""
    if len(layers.agreement) < 2:
        raise ConfigError(
            f"the agreement mask needs at least 2 layers, got {len(layers.agreement)}"
        )
    grids = list(layers.agreement.values())
    count = np.zeros(grids[0].shape, dtype=np.int16)
    for grid in grids:
        count += (grid.values != 0) & grid.valid_mask
    return Grid((count >= min_positive).astype(np.uint8), grids[0].transform, None)


def exclusion_mask(layers: ReferenceLayerSet) -> Grid:
    """Positive where at least one exclusion layer is positive."""
    if not layers.exclusion:
        raise ConfigError("the exclusion mask needs at least 1 layer")
    grids = list(layers.exclusion.values())
    out = np.zeros(grids[0].shape, dtype=bool)
    for grid in grids:
        out |= (grid.values != 0) & grid.valid_mask
    return Grid(out.astype(np.uint8), grids[0].transform, None)


@dataclass
class ObjectSet:
    """Connected objects of a binary map with their zonal bookkeeping.

    ``label_grid`` holds one positive integer id per foreground pixel and
    0 for background.  Fresh segmentations carry contiguous ids 1..n;
    filtered sets keep the surviving ids unchanged.
    """

    label_grid: Grid
    labels: np.ndarray
    counts: np.ndarray
    bboxes: np.ndarray
    connectivity: int = 8

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.labels) != len(self.counts) or len(self.labels) != len(self.bboxes):
            raise ContractError("object bookkeeping arrays disagree in length")
        total = int((self.label_grid.values > 0).sum())
        if int(self.counts.sum()) != total:
            raise ContractError("object pixel counts do not add up to the foreground")

    @property
    def object_count(self) -> int:
        return len(self.labels)

    def footprint(self) -> Grid:
        """Binary {0, 1} mask of all objects."""
        return Grid((self.label_grid.values > 0).astype(np.uint8),
                    self.label_grid.transform, None)

    def subset(self, keep: np.ndarray) -> "ObjectSet":
        """New object set with only the listed label ids; ids are preserved."""
        keep = np.asarray(keep, dtype=np.int64)
        keep_set = np.zeros(int(self.labels.max(initial=0)) + 1, dtype=bool)
        keep_set[keep] = True
        values = self.label_grid.values
        kept_values = np.where((values > 0) & keep_set[np.clip(values, 0, len(keep_set) - 1)],
                               values, 0).astype(np.int32)
        sel = np.isin(self.labels, keep)
        return ObjectSet(
            label_grid=Grid(kept_values, self.label_grid.transform, None),
            labels=self.labels[sel],
            counts=self.counts[sel],
            bboxes=self.bboxes[sel],
            connectivity=self.connectivity,
        )


def connected_components(mask: Grid, connectivity: int = 8) -> ObjectSet:
    """Segment a binary map into connected objects.

    The 8-connected default uses single-pass contour tracing; labels are
    contiguous 1..n in raster-scan order of each object's first pixel.
    Nodata cells count as background.
    """
    if connectivity not in (4, 8):
        raise ContractError(f"connectivity must be 4 or 8, got {connectivity}")
    if not is_binary(mask):
        raise ContractError("connected_components requires a {0, 1} binary mask")
    img = np.where(mask.valid_mask, mask.values, 0).astype(np.uint8)
    if connectivity == 8:
        labels, n = _ccl.label_contour_tracing(img)
    else:
        labels, n = _ccl.label_bfs4(img)
    ids = np.arange(1, n + 1, dtype=np.int64)
    counts = np.bincount(labels.ravel(), minlength=n + 1)[1:].astype(np.int64)
    bboxes = _bounding_boxes(labels, n)
    return ObjectSet(
        label_grid=Grid(labels, mask.transform, None),
        labels=ids,
        counts=counts,
        bboxes=bboxes,
        connectivity=connectivity,
    )


def _bounding_boxes(labels: np.ndarray, n: int) -> np.ndarray:
    h, w = labels.shape
    boxes = np.zeros((n, 4), dtype=np.int64)
    if n == 0:
        return boxes
    flat = labels.ravel()
    idx = np.flatnonzero(flat > 0)
    labs = flat[idx]
    rows = idx // w
    cols = idx % w
    r0 = np.full(n + 1, h, dtype=np.int64)
    c0 = np.full(n + 1, w, dtype=np.int64)
    r1 = np.full(n + 1, -1, dtype=np.int64)
    c1 = np.full(n + 1, -1, dtype=np.int64)
    np.minimum.at(r0, labs, rows)
    np.minimum.at(c0, labs, cols)
    np.maximum.at(r1, labs, rows)
    np.maximum.at(c1, labs, cols)
    boxes[:, 0] = r0[1:]
    boxes[:, 1] = c0[1:]
    boxes[:, 2] = r1[1:]
    boxes[:, 3] = c1[1:]
    return boxes


def _zonal_sums(objects: ObjectSet, values: np.ndarray, valid: np.ndarray):
    """(sum, valid-cell count) of ``values`` per object id."""
    labels = objects.label_grid.values.ravel()
    mask = (labels > 0) & valid.ravel()
    size = int(objects.labels.max(initial=0)) + 1
    sums = np.bincount(labels[mask], weights=values.ravel()[mask], minlength=size)
    counts = np.bincount(labels[mask], minlength=size)
    return sums[objects.labels], counts[objects.labels]


def zonal_mean(objects: ObjectSet, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``grid`` over each object's valid cells, plus those cell counts.

    Objects with no valid cell get NaN.
    """
    vals = grid.filled(0.0)
    valid = grid.valid_mask
    sums, counts = _zonal_sums(objects, np.where(valid, vals, 0.0), valid)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return means, counts


@dataclass(frozen=True)
class FilterOutcome:
    kept: ObjectSet
    removed_by_rule: dict[str, int]
    removed_labels: dict[str, list[int]]


def filter_objects(
    objects: ObjectSet,
    agreement: Grid,
    exclusion: Grid,
    ndvi_mean: Grid | None = None,
    s1_mean_asc: Grid | None = None,
    s1_mean_desc: Grid | None = None,
    *,
    agreement_overlap: float = 0.30,
    exclusion_overlap: float = 0.30,
    ndvi_limit: float = 0.6,
    backscatter_limit_db: float = -11.0,
    apply_overlap_rule: bool = True,
    apply_ndvi_rule: bool = True,
    apply_backscatter_rule: bool = True,
) -> FilterOutcome:
    """Delete objects matching any enabled removal rule; survivors keep their ids.

    Rule toggles exist because the NDVI rule targets radar-map objects and
    the backscatter rule targets optical-map objects, while the overlap
    rule applies to both.
    """
    rasters = [objects.label_grid, agreement, exclusion]
    for extra in (ndvi_mean, s1_mean_asc, s1_mean_desc):
        if extra is not None:
            rasters.append(extra)
    _require_coregistered(rasters, "object filtering")

    n = objects.object_count
    remove = np.zeros(n, dtype=bool)
    removed_labels: dict[str, list[int]] = {"overlap": [], "ndvi": [], "backscatter": []}

    if apply_overlap_rule and n:
        ones = np.ones(objects.label_grid.shape, dtype=bool)
        agr_sum, _ = _zonal_sums(objects, (agreement.values != 0).astype(np.float64), ones)
        exc_sum, _ = _zonal_sums(objects, (exclusion.values != 0).astype(np.float64), ones)
        agr_frac = agr_sum / objects.counts
        exc_frac = exc_sum / objects.counts
        hit = (agr_frac < agreement_overlap) & (exc_frac > exclusion_overlap)
        removed_labels["overlap"] = objects.labels[hit].tolist()
        remove |= hit

    if apply_ndvi_rule and ndvi_mean is not None and n:
        means, counts = zonal_mean(objects, ndvi_mean)
        with np.errstate(invalid="ignore"):
            hit = (counts > 0) & (means > ndvi_limit)
        removed_labels["ndvi"] = objects.labels[hit].tolist()
        remove |= hit

    if apply_backscatter_rule and n:
        hit = np.zeros(n, dtype=bool)
        for grid in (s1_mean_asc, s1_mean_desc):
            if grid is None:
                continue
            means, counts = zonal_mean(objects, grid)
            with np.errstate(invalid="ignore"):
                hit |= (counts > 0) & (means < backscatter_limit_db)
        removed_labels["backscatter"] = objects.labels[hit].tolist()
        remove |= hit

    kept = objects.subset(objects.labels[~remove])
    return FilterOutcome(
        kept=kept,
        removed_by_rule={rule: len(ids) for rule, ids in removed_labels.items()},
        removed_labels=removed_labels,
    )


def merge_maps(optical_objects: ObjectSet, radar_objects: ObjectSet) -> Grid:
    """Pixel-wise union of the surviving objects of both maps."""
    a = optical_objects.footprint()
    b = radar_objects.footprint()
    if a.shape != b.shape or a.transform != b.transform:
        raise ContractError("object sets to merge live on different grids")
    return Grid(((a.values != 0) | (b.values != 0)).astype(np.uint8), a.transform, None)
