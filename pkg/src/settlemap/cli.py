"""Command-line interface.

Each pipeline stage is independently runnable so intermediate products
can be inspected; ``run`` chains everything for one or more working
units.  Exit code 0 means every requested unit succeeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, config_from_dict, load_config, save_config
from .errors import SettlemapError
from .features import save_feature_stack
from .grid import downsample_percent, read_grid, read_mask, write_grid
from .manifest import read_optical_manifest, read_radar_manifest, read_reference_manifest
from .objects import agreement_mask, connected_components, exclusion_mask, filter_objects, merge_maps
from .optical import build_optical_stack
from .pipeline import WorkingUnit, load_unit, mosaic, run_units, run_unit, bbox_tag
from .radar import build_radar_stack
from .svm import classify_map, save_ensemble, train_ensemble
from .synth import SyntheticScenario, generate_synthetic
from .training import candidate_masks, load_threshold_table, slope_from_dem
from .validation import (
    ConfusionMatrix,
    assess_blocks,
    blocks_from_mask,
    compute_metrics,
    draw_samples,
    read_reference_labels,
    write_metrics_csv,
)

log = logging.getLogger(__name__)


def _load_config_arg(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    config = load_config(path)
    if config.thresholds != "demo" and not Path(config.thresholds).is_absolute():
        config.thresholds = str((Path(path).parent / config.thresholds).resolve())
    return config


def _unit_inputs(unit: WorkingUnit, config: PipelineConfig):
    scenes = read_optical_manifest(unit.optical_manifest, config.features.max_cloud_percent)
    radar_scenes = read_radar_manifest(unit.radar_manifest)
    optical = build_optical_stack(scenes, config.features.optical_cov_window)
    radar_asc = build_radar_stack(radar_scenes, "ascending",
                                  config.features.radar_cov_window,
                                  shape=optical.shape, transform=optical.transform)
    radar_desc = build_radar_stack(radar_scenes, "descending",
                                   config.features.radar_cov_window,
                                   shape=optical.shape, transform=optical.transform)
    return optical, radar_asc, radar_desc


def _candidates(unit: WorkingUnit, config: PipelineConfig, optical, radar_asc, radar_desc):
    climate = read_grid(unit.climate)
    slope = slope_from_dem(read_grid(unit.dem))
    thresholds = load_threshold_table(config.thresholds_path(unit.base_dir))
    sel = config.selection
    return candidate_masks(
        optical, radar_asc, radar_desc, climate, thresholds, slope,
        min_clear_count=sel.min_clear_count,
        min_radar_scenes=sel.min_radar_scenes,
        settlement_db_gate=sel.settlement_db_gate,
        non_settlement_db_gate=sel.non_settlement_db_gate,
        max_slope_deg=sel.max_slope_deg,
    )


def cmd_synth(args) -> int:
    presets = {
        "separated": {},
        "optical-only": {"radar_suppressed_fraction": 0.6},
        "radar-only": {"bare_fraction": 0.15},
    }
    overrides = dict(presets[args.preset])
    overrides.update(width=args.size, height=args.size, seed=args.seed,
                     cloud_fraction=args.cloud)
    scenario = SyntheticScenario(**overrides)
    unit = generate_synthetic(scenario, args.out)
    print(f"synthetic unit written to {unit.out_dir}")
    print(f"  unit:   {unit.unit_path}")
    print(f"  config: {unit.config_path}")
    print(f"  truth:  {unit.truth_path}")
    return 0


def cmd_features(args) -> int:
    config = _load_config_arg(args.config)
    unit = load_unit(args.unit)
    optical, radar_asc, radar_desc = _unit_inputs(unit, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, stack in (("optical", optical), ("radar_ascending", radar_asc),
                        ("radar_descending", radar_desc)):
        path = out / f"{unit.unit_id}_{name}_features.npz"
        save_feature_stack(stack, path)
        print(f"{name}: {len(stack)} bands -> {path}")
    return 0


def cmd_select(args) -> int:
    config = _load_config_arg(args.config)
    unit = load_unit(args.unit)
    optical, radar_asc, radar_desc = _unit_inputs(unit, config)
    masks = _candidates(unit, config, optical, radar_asc, radar_desc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_set, n_non = masks.counts()
    write_grid(masks.settlement, out / f"{unit.unit_id}_candidates_settlement.tif",
               encoding="binary-mask")
    write_grid(masks.non_settlement, out / f"{unit.unit_id}_candidates_non_settlement.tif",
               encoding="binary-mask")
    print(f"candidates: {n_set} settlement, {n_non} non-settlement")
    return 0


def cmd_classify(args) -> int:
    config = _load_config_arg(args.config)
    if args.seed is not None:
        config.seed = args.seed
    unit = load_unit(args.unit)
    optical, radar_asc, radar_desc = _unit_inputs(unit, config)
    masks = _candidates(unit, config, optical, radar_asc, radar_desc)
    if args.stack == "optical":
        stack = optical
    else:
        from .pipeline import _radar_pair_stack
        stack = _radar_pair_stack(radar_asc, radar_desc)
    ens = config.ensemble
    ensemble = train_ensemble(
        masks, stack, n_per_class=ens.samples_per_class, members=ens.members,
        vote_threshold=ens.vote_threshold, seed=config.seed,
        grid=config.grid_search.hyper_grid(), folds=ens.folds,
        tol=ens.kkt_tol, max_iter=ens.max_iterations,
    )
    label_map = classify_map(ensemble, stack)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    map_path = out / f"{unit.unit_id}_{args.stack}_map.tif"
    model_path = out / f"{unit.unit_id}_{args.stack}_ensemble.npz"
    write_grid(label_map, map_path, encoding="binary-mask")
    save_ensemble(ensemble, model_path)
    print(f"{args.stack} map -> {map_path} ({int(label_map.values.sum())} settlement px)")
    print(f"model -> {model_path}")
    for row in ensemble.provenance:
        print("  member {member}: C={C} gamma={gamma:.1f} cv={cv_accuracy:.3f}".format(**row))
    return 0


def cmd_postclass(args) -> int:
    config = _load_config_arg(args.config)
    unit = load_unit(args.unit)
    optical, radar_asc, radar_desc = _unit_inputs(unit, config)
    optical_map = read_mask(args.optical_map)
    radar_map = read_mask(args.radar_map)
    if unit.reference_manifest is None:
        print("unit has no reference manifest", file=sys.stderr)
        return 1
    reference = read_reference_manifest(unit.reference_manifest)
    pc = config.postclass
    agree = agreement_mask(reference, pc.agreement_min_layers)
    exclude = exclusion_mask(reference)
    kept = {}
    for name, label_map, apply_ndvi, apply_backscatter in (
        ("optical", optical_map, False, True),
        ("radar", radar_map, True, False),
    ):
        outcome = filter_objects(
            connected_components(label_map, pc.connectivity), agree, exclude,
            ndvi_mean=optical.band("ndvi_mean"),
            s1_mean_asc=radar_asc.band("mean"),
            s1_mean_desc=radar_desc.band("mean"),
            agreement_overlap=pc.agreement_overlap,
            exclusion_overlap=pc.exclusion_overlap,
            ndvi_limit=pc.ndvi_limit,
            backscatter_limit_db=pc.backscatter_limit_db,
            apply_ndvi_rule=apply_ndvi,
            apply_backscatter_rule=apply_backscatter,
        )
        kept[name] = outcome.kept
        print(f"{name}: kept {outcome.kept.object_count} objects, "
              f"removed {outcome.removed_by_rule}")
    fused = merge_maps(kept["optical"], kept["radar"])
    write_grid(fused, args.out, encoding="binary-mask")
    print(f"fused mask -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = _load_config_arg(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    units = [load_unit(p) for p in args.unit]
    results = run_units(units, config, Path(args.out_dir), workers=config.workers)
    ok = True
    for result in results:
        status = result.status
        extra = f" -> {result.mask_path}" if result.mask_path else ""
        print(f"unit {result.unit_id}: {status}{extra}")
        ok &= result.succeeded
    return 0 if ok else 1


def cmd_mosaic(args) -> int:
    masks = [read_mask(p) for p in args.inputs]
    merged = mosaic(masks)
    write_grid(merged, args.out, encoding="binary-mask")
    print(f"mosaic of {len(masks)} units -> {args.out} "
          f"({int(merged.values.sum())} settlement px)")
    return 0


def cmd_downsample(args) -> int:
    mask = read_mask(args.mask)
    pct = downsample_percent(mask, args.factor)
    write_grid(pct, args.out, encoding="percent")
    print(f"percent cover x{args.factor} -> {args.out}")
    return 0


def cmd_validate(args) -> int:
    mask = read_mask(args.mask)
    if args.draw_centers:
        centers = draw_samples(mask, args.n_settlement, args.n_non_settlement,
                               seed=args.seed or 0)
        with open(args.draw_centers, "w") as fh:
            fh.write("# lon lat map_class\n")
            for k, (row, col) in enumerate(centers):
                lon, lat = mask.transform.pixel_center(int(row), int(col))
                cls = "settlement" if k < args.n_settlement else "non-settlement"
                fh.write(f"{lon!r} {lat!r} {cls}\n")
        print(f"{len(centers)} block centers -> {args.draw_centers}")
        return 0
    if args.truth:
        truth = read_mask(args.truth)
        matrix = ConfusionMatrix(
            tp=int(((mask.values != 0) & (truth.values != 0)).sum()),
            fp=int(((mask.values != 0) & (truth.values == 0)).sum()),
            fn=int(((mask.values == 0) & (truth.values != 0)).sum()),
            tn=int(((mask.values == 0) & (truth.values == 0)).sum()),
        )
        report = compute_metrics(matrix)
        print(json.dumps({
            "kappa": report.kappa, "kappa_verbal": report.kappa_verbal,
            "pa_s_pct": report.pa_s, "pa_ns_pct": report.pa_ns,
            "ua_s_pct": report.ua_s, "ua_ns_pct": report.ua_ns,
            "aa_pct": report.aa, "pixels": report.total,
        }, indent=2))
        return 0
    if not args.labels:
        print("validate needs --labels, --truth, or --draw-centers", file=sys.stderr)
        return 2
    centers_lonlat, labels = read_reference_labels(args.labels)
    centers = np.array([mask.transform.index_of(lon, lat) for lon, lat in centers_lonlat])
    blocks = blocks_from_mask(mask, centers, labels)
    results = assess_blocks(blocks)
    write_metrics_csv(results, args.out)
    print(f"{len(blocks)} blocks, 12 metric combinations -> {args.out}")
    return 0


def cmd_preview(args) -> int:
    from PIL import Image

    mask = read_mask(args.mask)
    settled = mask.values != 0
    if args.truth:
        truth = read_mask(args.truth).values != 0
        rgb = np.zeros(mask.shape + (3,), dtype=np.uint8)
        rgb[settled & truth] = (255, 255, 255)   # hit
        rgb[settled & ~truth] = (220, 60, 60)    # commission
        rgb[~settled & truth] = (60, 90, 220)    # omission
        image = Image.fromarray(rgb, mode="RGB")
    else:
        image = Image.fromarray(np.where(settled, 255, 0).astype(np.uint8), mode="L")
    image.save(args.out)
    print(f"preview -> {args.out}")
    return 0


def cmd_config(args) -> int:
    save_config(config_from_dict({}), args.out)
    print(f"default configuration -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="settlemap",
        description="Settlement extent mapping from multitemporal optical and "
                    "radar raster stacks.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic working unit")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cloud", type=float, default=0.1)
    p.add_argument("--preset", choices=("separated", "optical-only", "radar-only"),
                   default="separated")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="compute and store the feature stacks")
    p.add_argument("--unit", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("select", help="compute candidate training masks")
    p.add_argument("--unit", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("classify", help="train one ensemble and classify its stack")
    p.add_argument("--unit", required=True)
    p.add_argument("--config")
    p.add_argument("--stack", choices=("optical", "radar"), required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("postclass", help="object-based fusion of two maps")
    p.add_argument("--unit", required=True)
    p.add_argument("--config")
    p.add_argument("--optical-map", required=True)
    p.add_argument("--radar-map", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_postclass)

    p = sub.add_parser("run", help="run the full pipeline for working units")
    p.add_argument("--config")
    p.add_argument("--unit", action="append", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("mosaic", help="merge unit masks into one raster")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mosaic)

    p = sub.add_parser("downsample", help="percent-cover aggregation of a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("validate", help="accuracy assessment of a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--labels", help="reference label file (block protocol)")
    p.add_argument("--truth", help="truth mask (pixel-level comparison)")
    p.add_argument("--out", default="metrics.csv")
    p.add_argument("--draw-centers", help="write sample block centers for labeling")
    p.add_argument("--n-settlement", type=int, default=1000)
    p.add_argument("--n-non-settlement", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("preview", help="render a mask to a PNG image")
    p.add_argument("--mask", required=True)
    p.add_argument("--truth", help="optional truth mask for an error overlay")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("config", help="write the default configuration file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SettlemapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
