"""End-to-end processing of working units and mosaicking.

One working unit runs through: scene ingestion, optical and radar
feature extraction, terrain masking, candidate selection, two
independently trained SVM ensembles, two classification maps,
object-based post-classification, and export.  Units are independent
jobs; a failure in one never touches another.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .config import PipelineConfig
from .errors import (
    ConfigError,
    ContractError,
    PipelineStageError,
    UnclassifiableUnitError,
)
from .features import FeatureStack
from .grid import Grid, write_grid, downsample_percent
from .manifest import (
    read_optical_manifest,
    read_radar_manifest,
    read_reference_manifest,
)
from .objects import agreement_mask, connected_components, exclusion_mask, filter_objects, merge_maps
from .optical import build_optical_stack
from .radar import build_radar_stack
from .svm import classify_map, save_ensemble, train_ensemble
from .training import candidate_masks, load_threshold_table, slope_from_dem
from .grid import read_grid

__all__ = [
    "WorkingUnit",
    "load_unit",
    "UnitResult",
    "run_unit",
    "run_units",
    "mosaic",
    "bbox_tag",
]

log = logging.getLogger(__name__)


@dataclass
class WorkingUnit:
    """One independently processed tile and the locations of its inputs."""

    unit_id: str
    bbox: tuple[float, float, float, float]  # west, south, east, north
    optical_manifest: Path
    radar_manifest: Path
    climate: Path
    dem: Path
    reference_manifest: Path | None = None
    base_dir: Path | None = None

    def __post_init__(self):
        west, south, east, north = self.bbox
        if not (west < east and south < north):
            raise ConfigError(f"unit {self.unit_id}: malformed bbox {self.bbox}")


def load_unit(path) -> WorkingUnit:
    """Read a unit descriptor; relative paths resolve against the file."""
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: unit descriptor must be a mapping")
    base = path.parent

    def resolve(key, optional=False):
        value = raw.get(key)
        if value is None:
            if optional:
                return None
            raise ConfigError(f"{path}: missing unit field {key!r}")
        p = Path(value)
        return p if p.is_absolute() else base / p

    bbox = raw.get("bbox")
    if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
        raise ConfigError(f"{path}: bbox must be [west, south, east, north]")
    return WorkingUnit(
        unit_id=str(raw.get("unit_id", path.stem)),
        bbox=tuple(float(v) for v in bbox),
        optical_manifest=resolve("optical_manifest"),
        radar_manifest=resolve("radar_manifest"),
        climate=resolve("climate"),
        dem=resolve("dem"),
        reference_manifest=resolve("reference_manifest", optional=True),
        base_dir=base,
    )


@dataclass
class UnitResult:
    unit_id: str
    status: str  # ok | unclassifiable | failed
    mask: Grid | None
    report: dict
    mask_path: Path | None = None

    @property
    def succeeded(self) -> bool:
        return self.status == "ok"


def _coord_tag(value: float, positive: str, negative: str, digits: int) -> str:
    prefix = positive if value >= 0 else negative
    magnitude = abs(value)
    if math.isclose(magnitude, round(magnitude), abs_tol=1e-9):
        return f"{prefix}{round(magnitude):0{digits}d}"
    return f"{prefix}{magnitude:0{digits + 4}.3f}".replace(".", "p")


def bbox_tag(bbox) -> str:
    """File-name tag from the upper-left and lower-right corner coordinates."""
    west, south, east, north = bbox
    return "_".join([
        _coord_tag(west, "e", "w", 3),
        _coord_tag(north, "n", "s", 2),
        _coord_tag(east, "e", "w", 3),
        _coord_tag(south, "n", "s", 2),
    ])


def run_unit(unit: WorkingUnit, config: PipelineConfig,
             out_dir: Path | None = None) -> UnitResult:
    """Process one unit; returns instead of raising for per-unit failures.

    The provenance report records seeds, per-member hyperparameters,
    candidate counts, removed-object counts per rule, and stage timings,
    which together are sufficient to reproduce the mask.
    """
    report: dict = {
        "unit": unit.unit_id,
        "bbox": list(unit.bbox),
        "seed": config.seed,
        "config": config.to_dict(),
        "timings_s": {},
        "stages": [],
    }
    timings = report["timings_s"]
    clock = time.perf_counter

    def stage(name):
        report["stages"].append(name)
        timings[name] = -clock()
        return name

    def done(name):
        timings[name] += clock()

    try:
        s = stage("ingest")
        try:
            scenes = read_optical_manifest(unit.optical_manifest,
                                           config.features.max_cloud_percent)
            radar_scenes = read_radar_manifest(unit.radar_manifest)
            climate = read_grid(unit.climate)
            dem = read_grid(unit.dem)
            unit_dir = unit.base_dir or unit.optical_manifest.parent
            thresholds = load_threshold_table(config.thresholds_path(unit_dir))
            reference = None
            if unit.reference_manifest is not None:
                reference = read_reference_manifest(unit.reference_manifest)
            report["scenes"] = {
                "optical": len(scenes),
                "radar_ascending": sum(sc.orbit_pass == "ascending" for sc in radar_scenes),
                "radar_descending": sum(sc.orbit_pass == "descending" for sc in radar_scenes),
            }
        except Exception as exc:
            raise PipelineStageError(s, str(exc)) from exc
        done(s)

        s = stage("optical-features")
        try:
            optical = build_optical_stack(scenes, config.features.optical_cov_window)
        except Exception as exc:
            raise PipelineStageError(s, str(exc)) from exc
        done(s)

        s = stage("radar-features")
        try:
            shape, transform = optical.shape, optical.transform
            radar_asc = build_radar_stack(radar_scenes, "ascending",
                                          config.features.radar_cov_window,
                                          shape=shape, transform=transform)
            radar_desc = build_radar_stack(radar_scenes, "descending",
                                           config.features.radar_cov_window,
                                           shape=shape, transform=transform)
        except Exception as exc:
            raise PipelineStageError(s, str(exc)) from exc
        done(s)

        s = stage("select")
        try:
            slope = slope_from_dem(dem)
            sel = config.selection
            masks = candidate_masks(
                optical, radar_asc, radar_desc, climate, thresholds, slope,
                min_clear_count=sel.min_clear_count,
                min_radar_scenes=sel.min_radar_scenes,
                settlement_db_gate=sel.settlement_db_gate,
                non_settlement_db_gate=sel.non_settlement_db_gate,
                max_slope_deg=sel.max_slope_deg,
            )
            n_set, n_non = masks.counts()
            report["candidates"] = {"settlement": n_set, "non_settlement": n_non}
            if n_set == 0 or n_non == 0:
                raise UnclassifiableUnitError(
                    f"unit {unit.unit_id}: {n_set} settlement / {n_non} non-settlement "
                    "candidates; cannot train"
                )
        except (UnclassifiableUnitError, PipelineStageError):
            raise
        except Exception as exc:
            raise PipelineStageError(s, str(exc)) from exc
        done(s)

        grid = config.grid_search.hyper_grid()
        ens = config.ensemble
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        ensembles = {}
        maps = {}
        for name, stack, train_seed in (("optical", optical, seeds[0]),
                                        ("radar", _radar_pair_stack(radar_asc, radar_desc),
                                         seeds[1])):
            s = stage(f"train-{name}")
            try:
                ensembles[name] = train_ensemble(
                    masks, stack,
                    n_per_class=ens.samples_per_class,
                    members=ens.members,
                    vote_threshold=ens.vote_threshold,
                    seed=train_seed,
                    grid=grid,
                    folds=ens.folds,
                    tol=ens.kkt_tol,
                    max_iter=ens.max_iterations,
                )
            except UnclassifiableUnitError:
                raise
            except Exception as exc:
                raise PipelineStageError(s, str(exc)) from exc
            done(s)

            s = stage(f"classify-{name}")
            try:
                maps[name] = classify_map(ensembles[name], stack)
            except Exception as exc:
                raise PipelineStageError(s, str(exc)) from exc
            done(s)
        report["ensembles"] = {name: e.provenance for name, e in ensembles.items()}
        report["vote_threshold"] = ens.vote_threshold

        s = stage("postclass")
        try:
            mask, post_report = _post_classify(maps, optical, radar_asc, radar_desc,
                                               reference, config)
            report["postclass"] = post_report
        except Exception as exc:
            raise PipelineStageError(s, str(exc)) from exc
        done(s)

        report["settlement_pixels"] = int(mask.values.sum())
        result = UnitResult(unit.unit_id, "ok", mask, report)
        if out_dir is not None:
            s = stage("export")
            try:
                result.mask_path = _export(unit, config, mask, ensembles, report, out_dir)
            except Exception as exc:
                raise PipelineStageError(s, str(exc)) from exc
            done(s)
        return result

    except UnclassifiableUnitError as exc:
        log.warning("unit %s unclassifiable: %s", unit.unit_id, exc)
        report["error"] = str(exc)
        _write_report(report, unit, out_dir)
        return UnitResult(unit.unit_id, "unclassifiable", None, report)
    except PipelineStageError as exc:
        log.error("unit %s failed: %s", unit.unit_id, exc)
        report["error"] = str(exc)
        _write_report(report, unit, out_dir)
        return UnitResult(unit.unit_id, "failed", None, report)


def _radar_pair_stack(radar_asc, radar_desc) -> FeatureStack:
    """Join both passes into one named stack for the radar classifier."""
    bands = {}
    for stack in (radar_asc, radar_desc):
        prefix = stack.orbit_pass[:3]
        for name, grid in stack.items():
            bands[f"{prefix}_{name}"] = grid
    return FeatureStack(bands)


def _post_classify(maps, optical, radar_asc, radar_desc, reference, config):
    pc = config.postclass
    enabled = pc.enabled and reference is not None
    if pc.enabled and reference is None:
        log.warning("post-classification enabled but the unit has no reference "
                    "manifest; merging the raw maps")
    post_report: dict = {"enabled": enabled}
    if not enabled:
        merged = (maps["optical"].values != 0) | (maps["radar"].values != 0)
        return Grid(merged.astype(np.uint8), maps["optical"].transform, None), post_report

    agree = agreement_mask(reference, pc.agreement_min_layers)
    exclude = exclusion_mask(reference)
    ndvi_mean = optical.band("ndvi_mean")
    filtered = {}
    for name, apply_ndvi, apply_backscatter in (
        ("optical", False, True),  # bare-soil false alarms carry low backscatter
        ("radar", True, False),    # forest false alarms carry high NDVI
    ):
        objects = connected_components(maps[name], pc.connectivity)
        outcome = filter_objects(
            objects, agree, exclude,
            ndvi_mean=ndvi_mean,
            s1_mean_asc=radar_asc.band("mean"),
            s1_mean_desc=radar_desc.band("mean"),
            agreement_overlap=pc.agreement_overlap,
            exclusion_overlap=pc.exclusion_overlap,
            ndvi_limit=pc.ndvi_limit,
            backscatter_limit_db=pc.backscatter_limit_db,
            apply_ndvi_rule=apply_ndvi,
            apply_backscatter_rule=apply_backscatter,
        )
        filtered[name] = outcome.kept
        post_report[name] = {
            "objects": objects.object_count,
            "kept": outcome.kept.object_count,
            "removed_by_rule": outcome.removed_by_rule,
        }
    return merge_maps(filtered["optical"], filtered["radar"]), post_report


def _export(unit, config, mask, ensembles, report, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = bbox_tag(unit.bbox)
    mask_path = out_dir / f"{unit.unit_id}_{tag}.tif"
    write_grid(mask, mask_path, encoding=config.export.encoding)
    report["outputs"] = {"mask": str(mask_path)}
    for factor in config.export.downsample_factors:
        pct = downsample_percent(mask, factor)
        pct_path = out_dir / f"{unit.unit_id}_{tag}_pct{factor}.tif"
        write_grid(pct, pct_path, encoding="percent")
        report["outputs"][f"percent_x{factor}"] = str(pct_path)
    for name, ensemble in ensembles.items():
        model_path = out_dir / f"{unit.unit_id}_{name}_ensemble.npz"
        save_ensemble(ensemble, model_path)
        report["outputs"][f"{name}_model"] = str(model_path)
    _write_report(report, unit, out_dir)
    return mask_path


def _write_report(report, unit, out_dir):
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{unit.unit_id}_report.json", "w") as fh:
        json.dump(report, fh, indent=2, default=str)


def run_units(units: list[WorkingUnit], config: PipelineConfig,
              out_dir: Path | None = None, workers: int = 1) -> list[UnitResult]:
    """Run several units, optionally in parallel processes."""
    if workers <= 1 or len(units) <= 1:
        return [run_unit(u, config, out_dir) for u in units]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_unit, u, config, out_dir) for u in units]
        return [f.result() for f in futures]


def mosaic(masks: list[Grid]) -> Grid:
    """Union of unit masks on a shared pixel lattice.

    Units may abut or overlap; overlapping pixels must agree, anything
    else is an error.  All masks must share the pixel size and sit on a
    common grid alignment.
    """
    if not masks:
        raise ContractError("mosaic needs at least one mask")
    first = masks[0].transform
    pw, ph = first.pixel_width, first.pixel_height
    offsets = []
    for m in masks:
        t = m.transform
        if not (math.isclose(t.pixel_width, pw, rel_tol=1e-9)
                and math.isclose(t.pixel_height, ph, rel_tol=1e-9)):
            raise ContractError("mosaic inputs differ in pixel size")
        dx = (t.origin_lon - first.origin_lon) / pw
        dy = (first.origin_lat - t.origin_lat) / ph
        if abs(dx - round(dx)) > 1e-6 or abs(dy - round(dy)) > 1e-6:
            raise ContractError("mosaic inputs are not aligned to a common lattice")
        offsets.append((int(round(dy)), int(round(dx))))

    rows0 = min(o[0] for o in offsets)
    cols0 = min(o[1] for o in offsets)
    rows1 = max(o[0] + m.height for o, m in zip(offsets, masks))
    cols1 = max(o[1] + m.width for o, m in zip(offsets, masks))
    out = np.zeros((rows1 - rows0, cols1 - cols0), dtype=np.uint8)
    written = np.zeros_like(out, dtype=bool)
    for (dy, dx), m in zip(offsets, masks):
        vals = (m.values != 0).astype(np.uint8)
        window = (slice(dy - rows0, dy - rows0 + m.height),
                  slice(dx - cols0, dx - cols0 + m.width))
        overlap = written[window]
        if np.any(out[window][overlap] != vals[overlap]):
            raise ContractError("mosaic inputs disagree on overlapping pixels")
        out[window] = np.where(overlap, out[window], vals)
        written[window] = True
    transform = type(first)(
        first.origin_lon + cols0 * pw,
        first.origin_lat - rows0 * ph,
        pw, ph,
    )
    return Grid(out, transform, None)
