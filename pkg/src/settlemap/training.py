"""Candidate training-point selection and training-set sampling.

Candidate settlement and non-settlement pixels are outlined by jointly
thresholding the temporal-mean NDBI, NDVI, and MNDWI (with per-climate-class
bounds), requiring enough clear optical observations, gating on the
temporal-mean backscatter of each orbit pass where enough radar scenes
exist, and masking steep terrain.  Training sets are then drawn uniformly
at random, without replacement, from the candidate masks.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DomainError
from .features import FeatureStack
from .grid import Grid, _require_coregistered
from .optical import OpticalFeatureStack
from .radar import RadarFeatureStack

__all__ = [
    "CANDIDATE_INDICES",
    "KOPPEN_CLASS_COUNT",
    "IndexThresholds",
    "ThresholdTable",
    "load_threshold_table",
    "write_threshold_table",
    "slope_from_dem",
    "CandidateMasks",
    "candidate_masks",
    "TrainingSet",
    "sample_training",
    "SETTLEMENT",
    "NON_SETTLEMENT",
]

log = logging.getLogger(__name__)

CANDIDATE_INDICES = ("ndbi", "ndvi", "mndwi")
KOPPEN_CLASS_COUNT = 30

SETTLEMENT = 1
NON_SETTLEMENT = -1

MEAN_EARTH_RADIUS_M = 6371008.8
_M_PER_DEG = MEAN_EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True)
class IndexThresholds:
    """Candidate bounds for one (climate class, index) pair.

    A pixel is settlement-eligible for the index when its temporal mean
    lies strictly inside (s_min, s_max), and non-settlement-eligible when
    it lies strictly outside [ns_min, ns_max].
    """

    s_min: float
    s_max: float
    ns_min: float
    ns_max: float

    def __post_init__(self):
        if not self.s_min < self.s_max:
            raise ConfigError(f"s_min must be below s_max, got {self.s_min} >= {self.s_max}")
        if not self.ns_min < self.ns_max:
            raise ConfigError(f"ns_min must be below ns_max, got {self.ns_min} >= {self.ns_max}")


class ThresholdTable:
    """Per-climate-class candidate thresholds for the three gating indices.

    A complete table holds 30 classes x 3 indices x 4 bounds = 360 values.
    """

    def __init__(self, entries: dict[tuple[int, str], IndexThresholds]):
        classes = sorted({kg for kg, _ in entries})
        for kg in classes:
            for index in CANDIDATE_INDICES:
                if (kg, index) not in entries:
                    raise ConfigError(f"threshold table misses index {index!r} for class {kg}")
        for kg, index in entries:
            if index not in CANDIDATE_INDICES:
                raise ConfigError(f"threshold table has unknown index {index!r}")
            if not (isinstance(kg, int) and kg >= 1):
                raise ConfigError(f"climate class ids must be positive integers, got {kg!r}")
        if len(classes) != KOPPEN_CLASS_COUNT:
            raise ConfigError(
                f"threshold table must cover {KOPPEN_CLASS_COUNT} climate classes, "
                f"got {len(classes)}"
            )
        self._entries = dict(entries)
        self.classes = classes

    def __getitem__(self, key: tuple[int, str]) -> IndexThresholds:
        return self._entries[key]

    def __len__(self) -> int:
        return len(self._entries) * 4

    def validate_covers(self, kg: Grid) -> None:
        """Raise ConfigError naming any climate class in the raster missing here."""
        present = np.unique(kg.values[kg.valid_mask]).astype(np.int64)
        missing = [int(c) for c in present if int(c) not in set(self.classes)]
        if missing:
            raise ConfigError(f"climate classes missing from threshold table: {missing}")

    def lookup_arrays(self, index: str) -> tuple[np.ndarray, ...]:
        """Per-bound lookup arrays indexed by climate class id (NaN where absent)."""
        size = max(self.classes) + 1
        arrays = tuple(np.full(size, np.nan) for _ in range(4))
        for kg in self.classes:
            t = self._entries[(kg, index)]
            for arr, v in zip(arrays, (t.s_min, t.s_max, t.ns_min, t.ns_max)):
                arr[kg] = v
        return arrays


def load_threshold_table(path) -> ThresholdTable:
    """Load a threshold table from a delimited text file.

    Expected columns: kg_class, index, s_min, s_max, ns_min, ns_max.
    Lines starting with ``#`` are comments; a header row is optional.
    """
    entries: dict[tuple[int, str], IndexThresholds] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(_strip_comments(fh))
        for row in reader:
            if not row:
                continue
            if row[0].strip().lower() == "kg_class":
                continue
            if len(row) != 6:
                raise ConfigError(f"threshold row needs 6 columns, got {row!r}")
            try:
                kg = int(row[0])
                index = row[1].strip().lower()
                bounds = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ConfigError(f"unparseable threshold row {row!r}") from exc
            key = (kg, index)
            if key in entries:
                raise ConfigError(f"duplicate threshold row for class {kg}, index {index!r}")
            entries[key] = IndexThresholds(*bounds)
    return ThresholdTable(entries)


def write_threshold_table(table: ThresholdTable, path, header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["kg_class", "index", "s_min", "s_max", "ns_min", "ns_max"])
        for kg in table.classes:
            for index in CANDIDATE_INDICES:
                t = table[(kg, index)]
                writer.writerow([kg, index, t.s_min, t.s_max, t.ns_min, t.ns_max])


def _strip_comments(lines):
    for line in lines:
        if line.lstrip().startswith("#"):
            continue
        yield line


# ---------------------------------------------------------------------------
# Terrain slope


def slope_from_dem(dem: Grid, spacing: tuple[float, float] | None = None) -> Grid:
    """Terrain slope in degrees from the 8-neighborhood of each pixel.

    For each pixel the neighbor with the largest absolute elevation
    difference is found and the slope is ``atan(|dz| / distance)`` to that
    neighbor (ties resolve to the nearer neighbor, i.e. the steeper
    angle).  Border pixels use their available neighbors.

    ``spacing`` gives the (east-west, north-south) ground distance of one
    pixel in the DEM's elevation units; when omitted it is derived from
    the geographic transform with a per-row latitude correction.
    """
    if dem.height < 2 or dem.width < 2:
        raise DomainError("slope needs a DEM of at least 2x2 pixels")
    z = dem.filled(np.nan)
    h, w = z.shape
    if spacing is not None:
        dx = np.full(h, float(spacing[0]))
        dy = float(spacing[1])
    else:
        tr = dem.transform
        lats = tr.origin_lat - (np.arange(h) + 0.5) * tr.pixel_height
        dx = tr.pixel_width * _M_PER_DEG * np.cos(np.radians(lats))
        dy = tr.pixel_height * _M_PER_DEG
    if np.any(dx <= 0) or dy <= 0:
        raise ContractError("pixel ground spacing must be positive")

    best_dz = np.zeros((h, w))
    best_dist = np.full((h, w), np.inf)
    pad = np.full((h + 2, w + 2), np.nan)
    pad[1:-1, 1:-1] = z
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            neighbor = pad[1 + dr:h + 1 + dr, 1 + dc:w + 1 + dc]
            dz = np.abs(neighbor - z)
            horiz = dx[:, None] * abs(dc)
            vert = dy * abs(dr)
            dist = np.sqrt(horiz * horiz + vert * vert) * np.ones((h, w))
            better = (dz > best_dz) | ((dz == best_dz) & (dist < best_dist))
            better &= ~np.isnan(dz)
            best_dz = np.where(better, dz, best_dz)
            best_dist = np.where(better, dist, best_dist)

    slope = np.degrees(np.arctan2(best_dz, np.where(np.isinf(best_dist), 1.0, best_dist)))
    slope[np.isinf(best_dist)] = 0.0  # flat or fully isolated pixels
    slope[np.isnan(z)] = np.nan
    return Grid(slope, dem.transform, np.nan)


# ---------------------------------------------------------------------------
# Candidate masks (joint optical / radar / terrain gating)


@dataclass(frozen=True)
class CandidateMasks:
    settlement: Grid
    non_settlement: Grid

    def counts(self) -> tuple[int, int]:
        return int(self.settlement.values.sum()), int(self.non_settlement.values.sum())


def candidate_masks(
    optical: OpticalFeatureStack,
    radar_asc: RadarFeatureStack,
    radar_desc: RadarFeatureStack,
    kg: Grid,
    thresholds: ThresholdTable,
    slope: Grid,
    *,
    min_clear_count: int = 5,
    min_radar_scenes: int = 5,
    settlement_db_gate: float = -7.0,
    non_settlement_db_gate: float = -11.0,
    max_slope_deg: float = 10.0,
) -> CandidateMasks:
    """Outline candidate settlement and non-settlement training pixels.

    A pixel is a settlement candidate when, simultaneously: each gating
    index mean lies strictly inside its climate-specific settlement band;
    the clear-observation count exceeds ``min_clear_count``; for each
    orbit pass either fewer than ``min_radar_scenes`` scenes exist or the
    pass's mean backscatter exceeds ``settlement_db_gate``; and the slope
    is below ``max_slope_deg``.  Non-settlement candidates mirror this
    with each index mean strictly outside its [ns_min, ns_max] band and
    mean backscatter below ``non_settlement_db_gate``.

    The two masks are disjoint by construction with any sanely calibrated
    table; this is verified and a violation raises ContractError.
    """
    stacks = [optical.band("count"), radar_asc.band("count"), radar_desc.band("count"),
              kg, slope]
    _require_coregistered(stacks, "candidate masks")
    thresholds.validate_covers(kg)

    shape = kg.shape
    sett = np.ones(shape, dtype=bool)
    nons = np.ones(shape, dtype=bool)

    kg_valid = kg.valid_mask
    kg_ids = np.where(kg_valid, kg.values, 0).astype(np.int64)
    kg_ids = np.clip(kg_ids, 0, max(thresholds.classes))

    for index in CANDIDATE_INDICES:
        mean = optical.index_mean(index).filled(np.nan)
        s_min, s_max, ns_min, ns_max = (arr[kg_ids] for arr in thresholds.lookup_arrays(index))
        with np.errstate(invalid="ignore"):
            sett &= (mean > s_min) & (mean < s_max)
            nons &= (mean < ns_min) | (mean > ns_max)
    sett &= kg_valid
    nons &= kg_valid

    clear_ok = optical.band("count").values > min_clear_count
    sett &= clear_ok
    nons &= clear_ok

    for stack in (radar_asc, radar_desc):
        n = stack.band("count").values
        mean_db = stack.band("mean").filled(np.nan)
        few = n < min_radar_scenes
        with np.errstate(invalid="ignore"):
            sett &= few | (mean_db > settlement_db_gate)
            nons &= few | (mean_db < non_settlement_db_gate)

    with np.errstate(invalid="ignore"):
        slope_ok = slope.filled(np.nan) < max_slope_deg
    sett &= slope_ok
    nons &= slope_ok

    overlap = int(np.count_nonzero(sett & nons))
    if overlap:
        raise ContractError(
            f"settlement and non-settlement candidates overlap on {overlap} pixels; "
            "the threshold table's bands are inconsistent"
        )
    tr = kg.transform
    return CandidateMasks(
        settlement=Grid(sett.astype(np.uint8), tr, None),
        non_settlement=Grid(nons.astype(np.uint8), tr, None),
    )


# ---------------------------------------------------------------------------
# Training-set sampling


@dataclass
class TrainingSet:
    """Labeled feature vectors sampled at candidate pixel locations.

    ``labels`` uses +1 for settlement and -1 for non-settlement; rows of
    ``features`` correspond to rows of ``locations`` (row, col) pairs.
    """

    locations: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        n = len(self.labels)
        if self.locations.shape != (n, 2) or self.features.shape[0] != n:
            raise ContractError("locations, features, and labels disagree in length")
        if n and len(np.unique(self.locations, axis=0)) != n:
            raise ContractError("training set contains duplicate pixel locations")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple[int, int]:
        return int((self.labels == SETTLEMENT).sum()), int((self.labels == NON_SETTLEMENT).sum())


def sample_training(
    masks: CandidateMasks,
    features: FeatureStack,
    n_per_class: int,
    seed,
) -> TrainingSet:
    """Draw up to ``n_per_class`` candidates per class, uniformly, without replacement.

    Candidates whose feature vector is incomplete in the designated stack
    are not eligible.  A class with fewer candidates than requested yields
    all of them with a logged warning; a class with none raises
    DomainError.  The draw is deterministic for a fixed seed.
    """
    if n_per_class < 1:
        raise ContractError("n_per_class must be >= 1")
    matrix, complete = features.to_matrix()
    rng = np.random.default_rng(seed)
    parts = []
    for label, mask in ((SETTLEMENT, masks.settlement), (NON_SETTLEMENT, masks.non_settlement)):
        if mask.shape != features.shape:
            raise ContractError("candidate masks and feature stack are not co-registered")
        eligible = np.flatnonzero((mask.values.ravel() != 0) & complete)
        if eligible.size == 0:
            name = "settlement" if label == SETTLEMENT else "non-settlement"
            raise DomainError(f"no usable {name} candidates; the unit cannot be classified")
        if eligible.size < n_per_class:
            name = "settlement" if label == SETTLEMENT else "non-settlement"
            log.warning(
                "only %d %s candidates available, requested %d",
                eligible.size, name, n_per_class,
            )
            chosen = eligible
        else:
            chosen = rng.choice(eligible, size=n_per_class, replace=False)
        parts.append((chosen, label))
    width = features.shape[1]
    idx = np.concatenate([c for c, _ in parts])
    labels = np.concatenate([np.full(len(c), lab, dtype=np.int8) for c, lab in parts])
    locations = np.stack([idx // width, idx % width], axis=1)
    return TrainingSet(locations=locations, features=matrix[idx], labels=labels)
