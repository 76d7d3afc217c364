"""Synthetic working units with known ground truth.

Generates the complete input set for one unit: multitemporal optical
scenes with cloud masks, linear-intensity radar scenes for both passes,
a DEM, a single-class climate raster, reference layers derived from the
truth with controlled corruption, a matching threshold table, and the
unit/config documents.  Everything is a deterministic function of the
scenario seed.

Class geometry: settlement blobs on a vegetated background, an optional
water body (feeding the exclusion layers), an optional bare-soil region
whose optical signature mimics settlements (radar tells them apart), and
an optional low-backscatter portion of each settlement (optical tells
those apart).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from .errors import ContractError
from .features import _windowed_sums
from .grid import GeoTransform, Grid, write_grid
from .manifest import (
    write_optical_manifest,
    write_radar_manifest,
    write_reference_manifest,
)
from .training import CANDIDATE_INDICES, IndexThresholds, ThresholdTable, write_threshold_table
from .validation import BLOCK_CELLS

__all__ = ["SyntheticScenario", "generate_synthetic", "make_reference_labels"]

# per-class band means: blue, green, red, nir, swir1, swir2
BAND_MEANS = {
    "vegetation": (0.04, 0.08, 0.05, 0.45, 0.18, 0.08),
    "settlement": (0.14, 0.16, 0.18, 0.19, 0.26, 0.22),
    "bare": (0.15, 0.17, 0.19, 0.20, 0.27, 0.23),
    "water": (0.08, 0.07, 0.05, 0.02, 0.01, 0.01),
}

# synthetic candidate bounds matched to the band means above; one row per class
_DEMO_BOUNDS = {
    "ndbi": (0.02, 0.40, -0.30, 0.45),
    "ndvi": (-0.15, 0.25, -0.25, 0.55),
    "mndwi": (-0.45, 0.10, -0.60, 0.25),
}


def demo_threshold_table() -> ThresholdTable:
    """A full 30-class table carrying the synthetic demo bounds in every class."""
    entries = {}
    for kg in range(1, 31):
        for index in CANDIDATE_INDICES:
            entries[(kg, index)] = IndexThresholds(*_DEMO_BOUNDS[index])
    return ThresholdTable(entries)


@dataclass
class SyntheticScenario:
    """Generative parameters for one synthetic working unit."""

    width: int = 256
    height: int = 256
    seed: int = 0
    bbox: tuple = (10.0, 49.9, 10.1, 50.0)  # west, south, east, north
    n_optical_scenes: int = 8  # clear counts must clear the >5 selection gate
    n_radar_scenes: int = 5  # per orbit pass
    cloud_fraction: float = 0.1
    settlement_fraction: float = 0.20
    water_fraction: float = 0.04
    bare_fraction: float = 0.0
    settlement_db: float = -5.0
    background_db: float = -14.0
    water_db: float = -18.0
    db_noise: float = 1.0
    radar_suppressed_fraction: float = 0.0
    suppressed_db: float = -12.5
    band_noise: float = 0.015
    scene_jitter: float = 0.01
    layer_dropout: float = 0.15
    climate_class: int = 14
    dem_style: str = "flat"  # flat | ramp

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ContractError("synthetic units must be at least 16x16 pixels")
        for name in ("cloud_fraction", "settlement_fraction", "water_fraction",
                     "bare_fraction", "radar_suppressed_fraction", "layer_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.95:
                raise ContractError(f"{name} must be within [0, 0.95], got {v}")
        if self.settlement_fraction + self.water_fraction + self.bare_fraction > 0.9:
            raise ContractError("class fractions leave no room for background")
        if self.dem_style not in ("flat", "ramp"):
            raise ContractError(f"unknown dem_style {self.dem_style!r}")

    @property
    def transform(self) -> GeoTransform:
        west, south, east, north = self.bbox
        return GeoTransform(west, north, (east - west) / self.width,
                            (north - south) / self.height)


def _smooth_field(rng: np.random.Generator, shape, window: int) -> np.ndarray:
    """Low-frequency noise in [0, 1], used to carve coherent regions."""
    window = max(3, window | 1)
    noise = rng.random(shape)
    smooth = _windowed_sums(noise, window) / _windowed_sums(np.ones(shape), window)
    lo, hi = smooth.min(), smooth.max()
    return (smooth - lo) / (hi - lo) if hi > lo else np.zeros(shape)


def _carve_fraction(field: np.ndarray, where: np.ndarray, fraction: float) -> np.ndarray:
    """Lowest-field subset of ``where`` covering about ``fraction`` of it."""
    if fraction <= 0 or not where.any():
        return np.zeros_like(where)
    cut = np.quantile(field[where], fraction)
    return where & (field <= cut)


def _truth_blobs(rng: np.random.Generator, scenario: SyntheticScenario) -> np.ndarray:
    h, w = scenario.height, scenario.width
    target = scenario.settlement_fraction * h * w
    mask = np.zeros((h, w), dtype=bool)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    max_r = max(3, min(h, w) // 8)
    for _ in range(512):
        if mask.sum() >= target:
            break
        cy = rng.integers(2, h - 2)
        cx = rng.integers(2, w - 2)
        a = rng.integers(2, max_r)
        b = rng.integers(2, max_r)
        if rng.random() < 0.5:
            blob = (np.abs(rows - cy) <= a) & (np.abs(cols - cx) <= b)
        else:
            blob = ((rows - cy) / a) ** 2 + ((cols - cx) / b) ** 2 <= 1.0
        mask |= blob
    return mask


@dataclass
class SyntheticUnit:
    """Paths and in-memory truth produced by :func:`generate_synthetic`."""

    out_dir: Path
    unit_path: Path
    config_path: Path
    truth_path: Path
    truth: Grid
    regions: dict = field(default_factory=dict)


def generate_synthetic(scenario: SyntheticScenario, out_dir) -> SyntheticUnit:
    """Write all inputs of one synthetic working unit below ``out_dir``."""
    rng = np.random.default_rng(scenario.seed)
    out_dir = Path(out_dir)
    (out_dir / "optical").mkdir(parents=True, exist_ok=True)
    (out_dir / "radar").mkdir(exist_ok=True)
    (out_dir / "reference").mkdir(exist_ok=True)
    h, w = scenario.height, scenario.width
    tr = scenario.transform

    # class geometry
    truth = _truth_blobs(rng, scenario)
    background = ~truth
    region_field = _smooth_field(rng, (h, w), min(h, w) // 6)
    water = _carve_fraction(region_field, background,
                            scenario.water_fraction / max(background.mean(), 1e-9))
    bare = _carve_fraction(1.0 - region_field, background & ~water,
                           scenario.bare_fraction / max((background & ~water).mean(), 1e-9))
    vegetation = background & ~water & ~bare
    suppress_field = _smooth_field(rng, (h, w), min(h, w) // 10)
    suppressed = _carve_fraction(suppress_field, truth, scenario.radar_suppressed_fraction)

    class_of = np.zeros((h, w), dtype=np.uint8)  # 0 veg, 1 settlement, 2 water, 3 bare
    class_of[truth] = 1
    class_of[water] = 2
    class_of[bare] = 3

    # optical scenes
    optical_rows = []
    for k in range(scenario.n_optical_scenes):
        jitter = rng.normal(0.0, scenario.scene_jitter)
        paths = {}
        for bi, band in enumerate(("blue", "green", "red", "nir", "swir1", "swir2")):
            vals = np.empty((h, w))
            for ci, cls in enumerate(("vegetation", "settlement", "water", "bare")):
                vals[class_of == ci] = BAND_MEANS[cls][bi]
            vals = vals + jitter + rng.normal(0.0, scenario.band_noise, (h, w))
            np.clip(vals, 0.001, None, out=vals)
            name = f"scene{k:02d}_{band}.tif"
            write_grid(Grid(vals, tr, None), out_dir / "optical" / name)
            paths[band] = name
        cloud = _carve_fraction(_smooth_field(rng, (h, w), min(h, w) // 8),
                                np.ones((h, w), dtype=bool), scenario.cloud_fraction)
        valid_name = f"scene{k:02d}_valid.tif"
        write_grid(Grid((~cloud).astype(np.uint8), tr, None),
                   out_dir / "optical" / valid_name, encoding="binary-mask")
        optical_rows.append({
            "timestamp": f"2015-{k + 1:02d}-15T10:00:00",
            "cloud_percent": round(100.0 * cloud.mean(), 2),
            "validity": valid_name,
            **paths,
        })
    write_optical_manifest(out_dir / "optical" / "manifest.txt", optical_rows)

    # radar scenes (linear intensity files)
    db_map = np.full((h, w), scenario.background_db)
    db_map[truth] = scenario.settlement_db
    db_map[suppressed] = scenario.suppressed_db
    db_map[water] = scenario.water_db
    radar_rows = []
    for orbit_pass in ("ascending", "descending"):
        for k in range(scenario.n_radar_scenes):
            db = db_map + rng.normal(0.0, scenario.db_noise, (h, w))
            name = f"{orbit_pass[:3]}{k:02d}.tif"
            write_grid(Grid(np.power(10.0, db / 10.0), tr, None), out_dir / "radar" / name)
            radar_rows.append({
                "timestamp": f"2015-{k + 1:02d}-01T05:30:00",
                "orbit_pass": orbit_pass,
                "units": "linear",
                "path": name,
            })
    write_radar_manifest(out_dir / "radar" / "manifest.txt", radar_rows)

    # terrain and climate
    if scenario.dem_style == "flat":
        dem = np.full((h, w), 200.0)
    else:
        dem = 200.0 + np.linspace(0.0, 40.0, w)[None, :] * np.ones((h, 1))
    write_grid(Grid(dem, tr, None), out_dir / "dem.tif")
    write_grid(Grid(np.full((h, w), scenario.climate_class, dtype=np.int32), tr, None),
               out_dir / "climate.tif")

    # reference layers: two corrupted copies of the truth, roads, water
    keep_a = _smooth_field(rng, (h, w), 5) > scenario.layer_dropout
    keep_b = _smooth_field(rng, (h, w), 5) > scenario.layer_dropout
    roads = np.zeros((h, w), dtype=bool)
    for r in rng.integers(2, h - 2, 2):
        roads[r, :] = True
    for c in rng.integers(2, w - 2, 2):
        roads[:, c] = True
    road_cluster = _windowed_sums(roads.astype(np.float64), 5) > 0
    layers = {
        "OSM-S": truth & keep_a,
        "GL30-S": truth & keep_b,
        "OSM-R": roads,
        "DLR-RC": road_cluster,
        "GLC30-W": water,
        "GLC30-WL": np.zeros((h, w), dtype=bool),
        "DLR-RM": np.zeros((h, w), dtype=bool),
    }
    manifest_rows = {}
    for role, mask in layers.items():
        name = role.lower().replace("-", "_") + ".tif"
        write_grid(Grid(mask.astype(np.uint8), tr, None),
                   out_dir / "reference" / name, encoding="binary-mask")
        manifest_rows[role] = name
    write_reference_manifest(out_dir / "reference" / "manifest.txt", manifest_rows)

    # thresholds, truth, unit and config documents
    write_threshold_table(
        demo_threshold_table(), out_dir / "thresholds.csv",
        header_comment="Synthetic demo thresholds matched to the generated band "
                       "distributions.\nNot a calibrated production table.",
    )
    truth_grid = Grid(truth.astype(np.uint8), tr, None)
    write_grid(truth_grid, out_dir / "truth.tif", encoding="binary-mask")

    unit_doc = {
        "unit_id": f"synthetic_{scenario.seed}",
        "bbox": list(scenario.bbox),
        "optical_manifest": "optical/manifest.txt",
        "radar_manifest": "radar/manifest.txt",
        "climate": "climate.tif",
        "dem": "dem.tif",
        "reference_manifest": "reference/manifest.txt",
    }
    unit_path = out_dir / "unit.yaml"
    with open(unit_path, "w") as fh:
        yaml.safe_dump(unit_doc, fh, sort_keys=False)
    config_doc = {"seed": scenario.seed, "thresholds": "thresholds.csv"}
    config_path = out_dir / "config.yaml"
    with open(config_path, "w") as fh:
        yaml.safe_dump(config_doc, fh, sort_keys=False)
    with open(out_dir / "scenario.yaml", "w") as fh:
        yaml.safe_dump(asdict(scenario), fh, sort_keys=False)

    return SyntheticUnit(
        out_dir=out_dir,
        unit_path=unit_path,
        config_path=config_path,
        truth_path=out_dir / "truth.tif",
        truth=truth_grid,
        regions={"water": water, "bare": bare, "vegetation": vegetation,
                 "suppressed": suppressed, "roads": roads},
    )


def make_reference_labels(truth: Grid, centers: np.ndarray, seed,
                          roads: np.ndarray | None = None,
                          label_noise: float = 0.0) -> list[tuple]:
    """Photointerpretation-style labels for 3x3 blocks around ``centers``.

    Settlement cells become Buildings or Building Lots, road cells
    Roads/Paved, the rest None; ``label_noise`` flips that fraction of
    cells to a random other label.
    """
    rng = np.random.default_rng(seed)
    settled = (truth.values != 0) & truth.valid_mask
    labels = []
    for row, col in centers:
        cells = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r, c = row + dr, col + dc
                if settled[r, c]:
                    cells.append("B" if rng.random() < 0.7 else "L")
                elif roads is not None and roads[r, c]:
                    cells.append("R")
                else:
                    cells.append("N")
        if label_noise > 0:
            for k in range(BLOCK_CELLS):
                if rng.random() < label_noise:
                    others = [x for x in "BLRN" if x != cells[k]]
                    cells[k] = others[rng.integers(0, 3)]
        labels.append(tuple(cells))
    return labels
