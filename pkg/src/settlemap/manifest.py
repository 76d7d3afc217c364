"""Plain-text scene and reference-layer manifests.

All paths inside a manifest are resolved relative to the manifest file.
Lines starting with ``#`` are comments.

Optical manifest, one scene per line::

    <timestamp> <cloud_percent> <validity_path|-> <blue> <green> <red> <nir> <swir1> <swir2>

Radar manifest, one scene per line::

    <timestamp> <ascending|descending> <linear|db> <backscatter_path> [<validity_path>|-]

Reference-layer manifest, one layer per line::

    <role> <path>
"""

from __future__ import annotations

import datetime
import logging
from pathlib import Path

from .errors import ConfigError
from .grid import read_grid, read_mask
from .objects import ReferenceLayerSet, canonical_role
from .optical import SpectralScene
from .radar import PASSES, RadarScene, to_decibel

__all__ = [
    "read_optical_manifest",
    "read_radar_manifest",
    "read_reference_manifest",
    "write_optical_manifest",
    "write_radar_manifest",
    "write_reference_manifest",
]

log = logging.getLogger(__name__)


def _parse_timestamp(token: str):
    try:
        return float(token)
    except ValueError:
        pass
    try:
        return datetime.datetime.fromisoformat(token)
    except ValueError as exc:
        raise ConfigError(f"unparseable timestamp {token!r}") from exc


def _manifest_lines(path: Path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            yield lineno, tokens


def read_optical_manifest(path, max_cloud_percent: float | None = None) -> list[SpectralScene]:
    """Load optical scenes; scenes at or above the cloud gate are skipped."""
    path = Path(path)
    base = path.parent
    scenes = []
    skipped = 0
    for lineno, tokens in _manifest_lines(path):
        if len(tokens) != 9:
            raise ConfigError(f"{path}:{lineno}: expected 9 fields, got {len(tokens)}")
        timestamp = _parse_timestamp(tokens[0])
        cloud = float(tokens[1])
        if max_cloud_percent is not None and cloud >= max_cloud_percent:
            skipped += 1
            continue
        validity = None if tokens[2] == "-" else read_mask(base / tokens[2])
        bands = [read_grid(base / t) for t in tokens[3:9]]
        scenes.append(SpectralScene(
            blue=bands[0], green=bands[1], red=bands[2],
            nir=bands[3], swir1=bands[4], swir2=bands[5],
            validity=validity, timestamp=timestamp, cloud_percent=cloud,
        ))
    if skipped:
        log.info("skipped %d optical scenes at or above %.0f%% cloud cover",
                 skipped, max_cloud_percent)
    return scenes


def read_radar_manifest(path) -> list[RadarScene]:
    """Load radar scenes, converting linear intensities to dB on the fly."""
    path = Path(path)
    base = path.parent
    scenes = []
    for lineno, tokens in _manifest_lines(path):
        if len(tokens) not in (4, 5):
            raise ConfigError(f"{path}:{lineno}: expected 4 or 5 fields")
        timestamp = _parse_timestamp(tokens[0])
        orbit_pass = tokens[1].lower()
        if orbit_pass not in PASSES:
            raise ConfigError(f"{path}:{lineno}: pass must be one of {PASSES}")
        units = tokens[2].lower()
        if units not in ("linear", "db"):
            raise ConfigError(f"{path}:{lineno}: units must be 'linear' or 'db'")
        grid = read_grid(base / tokens[3])
        if units == "linear":
            grid = to_decibel(grid)
        validity = None
        if len(tokens) == 5 and tokens[4] != "-":
            validity = read_mask(base / tokens[4])
        scenes.append(RadarScene(
            backscatter=grid, orbit_pass=orbit_pass,
            timestamp=timestamp, validity=validity,
        ))
    return scenes


def read_reference_manifest(path) -> ReferenceLayerSet:
    """Load reference layers by role; unknown roles are an error, missing roles legal."""
    path = Path(path)
    base = path.parent
    layers = ReferenceLayerSet()
    for lineno, tokens in _manifest_lines(path):
        if len(tokens) != 2:
            raise ConfigError(f"{path}:{lineno}: expected '<role> <path>'")
        layers.add(tokens[0], read_mask(base / tokens[1]))
    log.info("reference layers: %d agreement, %d exclusion",
             len(layers.agreement), len(layers.exclusion))
    return layers


def write_optical_manifest(path, rows: list[dict]) -> None:
    """Rows carry keys: timestamp, cloud_percent, validity (or None), and the six bands."""
    with open(path, "w") as fh:
        fh.write("# timestamp cloud_percent validity blue green red nir swir1 swir2\n")
        for row in rows:
            fh.write(
                f"{row['timestamp']} {row['cloud_percent']} {row.get('validity') or '-'} "
                f"{row['blue']} {row['green']} {row['red']} "
                f"{row['nir']} {row['swir1']} {row['swir2']}\n"
            )


def write_radar_manifest(path, rows: list[dict]) -> None:
    """Rows carry keys: timestamp, orbit_pass, units, path, and optional validity."""
    with open(path, "w") as fh:
        fh.write("# timestamp pass units path validity\n")
        for row in rows:
            fh.write(
                f"{row['timestamp']} {row['orbit_pass']} {row['units']} {row['path']} "
                f"{row.get('validity') or '-'}\n"
            )


def write_reference_manifest(path, layers: dict[str, str]) -> None:
    with open(path, "w") as fh:
        fh.write("# role path\n")
        for role, layer_path in layers.items():
            fh.write(f"{canonical_role(role)} {layer_path}\n")
