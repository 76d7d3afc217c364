"""Georeferenced raster grids, file I/O, resampling, and mask export.

A :class:`Grid` is a single-band 2D raster in geographic (lon/lat)
coordinates with explicit nodata semantics.  Grids are immutable after
construction and all operations here are pure functions, so grids can be
shared freely between threads and processes.

Two raster containers are supported:

* GeoTIFF, single band, optionally deflate-compressed, carrying the
  pixel-scale/tiepoint tags and a ``GDAL_NODATA`` tag;
* ESRI ASCII grid (``.asc``) as a hand-editable fallback for fixtures
  (square pixels only).

Binary settlement masks use ``{0, 1}`` in memory; the ``{0, 255}`` file
convention is applied only by :func:`write_grid` with the ``binary-mask``
encoding, and :func:`read_mask` is its inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError, RasterFormatError

__all__ = [
    "GeoTransform",
    "Grid",
    "TemporalStack",
    "read_grid",
    "read_mask",
    "write_grid",
    "resample_nearest",
    "downsample_percent",
    "ENCODINGS",
]

ENCODINGS = ("binary-mask", "percent", "float")

# GeoTIFF / GDAL tag codes
_TAG_MODEL_PIXEL_SCALE = 33550
_TAG_MODEL_TIEPOINT = 33922
_TAG_MODEL_TRANSFORMATION = 34264
_TAG_GEO_KEY_DIRECTORY = 34735
_TAG_GDAL_NODATA = 42113

# GeoKey directory declaring a plain geographic EPSG:4326 raster
_GEOKEYS_EPSG4326 = (
    1, 1, 0, 3,          # version, revision 1.0, 3 keys
    1024, 0, 1, 2,       # GTModelType = geographic
    1025, 0, 1, 1,       # GTRasterType = PixelIsArea
    2048, 0, 1, 4326,    # GeographicType = WGS 84
)


@dataclass(frozen=True)
class GeoTransform:
    """North-up geographic transform; pixel (0, 0) maps to the upper-left corner.

    ``pixel_height`` is positive and applied southward: row r spans
    latitudes ``origin_lat - r*h`` down to ``origin_lat - (r+1)*h``.
    """

    origin_lon: float
    origin_lat: float
    pixel_width: float
    pixel_height: float

    def __post_init__(self):
        if not (self.pixel_width > 0 and self.pixel_height > 0):
            raise ContractError(
                f"pixel sizes must be positive, got {self.pixel_width} x {self.pixel_height}"
            )

    def pixel_center(self, row: float, col: float) -> tuple[float, float]:
        """(lon, lat) of the center of pixel (row, col)."""
        return (
            self.origin_lon + (col + 0.5) * self.pixel_width,
            self.origin_lat - (row + 0.5) * self.pixel_height,
        )

    def index_of(self, lon: float, lat: float) -> tuple[int, int]:
        """(row, col) of the pixel containing the point; may fall outside the grid."""
        col = math.floor((lon - self.origin_lon) / self.pixel_width)
        row = math.floor((self.origin_lat - lat) / self.pixel_height)
        return row, col

    def bounds(self, width: int, height: int) -> tuple[float, float, float, float]:
        """(west, south, east, north) outer edges for a grid of the given shape."""
        return (
            self.origin_lon,
            self.origin_lat - height * self.pixel_height,
            self.origin_lon + width * self.pixel_width,
            self.origin_lat,
        )

    def scaled(self, factor: float) -> "GeoTransform":
        return GeoTransform(
            self.origin_lon,
            self.origin_lat,
            self.pixel_width * factor,
            self.pixel_height * factor,
        )


def _is_nan(value) -> bool:
    return isinstance(value, float) and math.isnan(value)


@dataclass(frozen=True, eq=False)
class Grid:
    """A single-band georeferenced raster with a nodata sentinel.

    ``nodata`` may be ``None`` (all samples valid), a finite number, or NaN
    for float grids.  Every non-nodata sample must be finite.  The value
    array is locked read-only on construction.
    """

    values: np.ndarray
    transform: GeoTransform
    nodata: float | int | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ContractError(f"grid values must be 2D, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        if np.issubdtype(values.dtype, np.floating):
            finite = np.isfinite(values)
            if not finite.all():
                if not _is_nan(self.nodata):
                    raise ContractError("non-finite samples present but nodata is not NaN")
                if not (finite | np.isnan(values)).all():
                    raise ContractError("grid contains inf samples")
        values.flags.writeable = False

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def valid_mask(self) -> np.ndarray:
        """Boolean array, True where the sample is not nodata."""
        if self.nodata is None:
            return np.ones(self.shape, dtype=bool)
        if _is_nan(self.nodata):
            return ~np.isnan(self.values)
        return self.values != self.nodata

    def filled(self, fill=np.nan) -> np.ndarray:
        """Float64 copy of the values with nodata replaced by ``fill``."""
        out = self.values.astype(np.float64, copy=True)
        out[~self.valid_mask] = fill
        return out

    def with_values(self, values: np.ndarray, nodata=...) -> "Grid":
        """New grid sharing this grid's transform."""
        nd = self.nodata if nodata is ... else nodata
        return Grid(values, self.transform, nd)

    def same_georeference(self, other: "Grid") -> bool:
        return self.shape == other.shape and self.transform == other.transform


def _require_coregistered(grids, what: str):
    first = grids[0]
    for g in grids[1:]:
        if g.shape != first.shape or g.transform != first.transform:
            raise ContractError(f"{what}: grids are not co-registered")


def is_binary(grid: Grid) -> bool:
    """True if every valid sample of ``grid`` is 0 or 1."""
    vals = grid.values[grid.valid_mask]
    return bool(np.isin(vals, (0, 1)).all())


@dataclass
class TemporalStack:
    """Co-registered scene grids ordered by acquisition time.

    Each scene may carry a validity mask (nonzero = usable); pixels that
    are masked out or nodata are excluded from every temporal statistic.
    The constructor sorts scenes ascending by timestamp.
    """

    scenes: list[Grid]
    timestamps: list
    validity: list[Grid | None] = field(default=None)

    def __post_init__(self):
        if self.validity is None:
            self.validity = [None] * len(self.scenes)
        if not (len(self.scenes) == len(self.timestamps) == len(self.validity)):
            raise ContractError("scenes, timestamps and validity lists differ in length")
        if self.scenes:
            _require_coregistered(self.scenes, "temporal stack")
            for v in self.validity:
                if v is not None and (
                    v.shape != self.scenes[0].shape or v.transform != self.scenes[0].transform
                ):
                    raise ContractError("validity mask is not co-registered with its scene")
        order = sorted(range(len(self.scenes)), key=lambda i: self.timestamps[i])
        self.scenes = [self.scenes[i] for i in order]
        self.timestamps = [self.timestamps[i] for i in order]
        self.validity = [self.validity[i] for i in order]

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scenes[0].shape

    @property
    def transform(self) -> GeoTransform:
        return self.scenes[0].transform

    def masked_values(self) -> np.ndarray:
        """(n_scenes, H, W) float64 array with NaN at invalid observations."""
        out = np.empty((len(self.scenes),) + self.shape, dtype=np.float64)
        for k, (scene, valid) in enumerate(zip(self.scenes, self.validity)):
            layer = scene.filled(np.nan)
            if valid is not None:
                layer[valid.values == 0] = np.nan
            out[k] = layer
        return out


# ---------------------------------------------------------------------------
# File I/O


def read_grid(path) -> Grid:
    """Read a single-band raster from GeoTIFF or ESRI ASCII grid.

    Nodata cells are preserved via the grid's nodata sentinel.  Raises
    :class:`RasterFormatError` for unsupported layouts and ``OSError`` for
    unreadable files.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic[:2] in (b"II", b"MM"):
        return _read_geotiff(path)
    return _read_ascii_grid(path)


def read_mask(path) -> Grid:
    """Read a settlement mask written with the ``binary-mask`` encoding.

    Inverse of the 255-valued export convention: any positive sample
    becomes 1, everything else 0.
    """
    grid = read_grid(path)
    vals = np.where(grid.valid_mask & (np.nan_to_num(grid.filled(0.0)) > 0), 1, 0)
    return Grid(vals.astype(np.uint8), grid.transform, None)


def write_grid(grid: Grid, path, encoding: str = "float") -> None:
    """Write ``grid`` to GeoTIFF or ESRI ASCII grid (chosen by extension).

    Encodings:

    * ``binary-mask``: valid samples must be in {0, 1}; stored as uint8
      {0, 255}; nodata cells are stored as 0.
    * ``percent``: valid samples must lie in [0, 100]; stored as uint8
      after rounding to the nearest integer; nodata stored as 255.
    * ``float``: stored as float64, exact round-trip.

    GeoTIFF output is deflate-compressed.
    """
    if encoding not in ENCODINGS:
        raise ContractError(f"unknown encoding {encoding!r}, expected one of {ENCODINGS}")
    values, nodata = _encode(grid, encoding)
    path = Path(path)
    if path.suffix.lower() in (".asc", ".agr"):
        _write_ascii_grid(values, grid.transform, nodata, path)
    else:
        _write_geotiff(values, grid.transform, nodata, path)


def _encode(grid: Grid, encoding: str):
    valid = grid.valid_mask
    if encoding == "binary-mask":
        if not is_binary(grid):
            raise ContractError("binary-mask encoding requires values in {0, 1}")
        out = np.zeros(grid.shape, dtype=np.uint8)
        out[valid & (grid.values == 1)] = 255
        return out, None
    if encoding == "percent":
        vals = grid.filled(np.nan)
        ok = np.isnan(vals) | ((vals >= 0) & (vals <= 100))
        if not ok.all():
            raise ContractError("percent encoding requires values in [0, 100]")
        out = np.full(grid.shape, 255, dtype=np.uint8)
        out[valid] = np.rint(vals[valid]).astype(np.uint8)
        nodata = 255 if not valid.all() else None
        return out, nodata
    # float: keep exact float64 samples, NaN as nodata
    vals = grid.values.astype(np.float64, copy=True)
    if grid.nodata is not None and not _is_nan(grid.nodata):
        vals[~valid] = np.nan
    nodata = np.nan if (grid.nodata is not None or not np.isfinite(vals).all()) else None
    return vals, nodata


def _write_geotiff(values, transform: GeoTransform, nodata, path):
    import tifffile

    extratags = [
        (_TAG_MODEL_PIXEL_SCALE, "d", 3, (transform.pixel_width, transform.pixel_height, 0.0)),
        (_TAG_MODEL_TIEPOINT, "d", 6,
         (0.0, 0.0, 0.0, transform.origin_lon, transform.origin_lat, 0.0)),
        (_TAG_GEO_KEY_DIRECTORY, "H", len(_GEOKEYS_EPSG4326), _GEOKEYS_EPSG4326),
    ]
    if nodata is not None:
        extratags.append((_TAG_GDAL_NODATA, "s", 0, _format_nodata(nodata)))
    tifffile.imwrite(path, values, compression="adobe_deflate", extratags=extratags)


def _format_nodata(nodata) -> str:
    if _is_nan(nodata):
        return "nan"
    if float(nodata) == int(nodata):
        return str(int(nodata))
    return repr(float(nodata))


def _read_geotiff(path) -> Grid:
    import tifffile

    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            if page.samplesperpixel != 1:
                raise RasterFormatError(f"{path}: multi-band rasters are not supported")
            if page.dtype is None or page.dtype.kind not in "uif":
                raise RasterFormatError(f"{path}: unsupported sample type {page.dtype}")
            values = page.asarray()
            tags = page.tags
            if _TAG_MODEL_TRANSFORMATION in tags and _TAG_MODEL_PIXEL_SCALE not in tags:
                raise RasterFormatError(
                    f"{path}: rotated/general model transformations are not supported"
                )
            transform = _transform_from_tags(tags)
            nodata = _nodata_from_tags(tags, values.dtype)
    except RasterFormatError:
        raise
    except Exception as exc:  # malformed container
        raise RasterFormatError(f"{path}: not a readable single-band TIFF ({exc})") from exc
    if values.ndim != 2:
        raise RasterFormatError(f"{path}: expected a 2D raster, got shape {values.shape}")
    return Grid(values, transform, nodata)


def _transform_from_tags(tags) -> GeoTransform:
    if _TAG_MODEL_PIXEL_SCALE not in tags or _TAG_MODEL_TIEPOINT not in tags:
        # plain TIFF without georeferencing: unit pixel grid anchored at (0, 0)
        return GeoTransform(0.0, 0.0, 1.0, 1.0)
    sx, sy = tags[_TAG_MODEL_PIXEL_SCALE].value[:2]
    tie = tags[_TAG_MODEL_TIEPOINT].value
    i, j, _, x, y = tie[0], tie[1], tie[2], tie[3], tie[4]
    return GeoTransform(x - i * sx, y + j * sy, float(sx), float(sy))


def _nodata_from_tags(tags, dtype):
    if _TAG_GDAL_NODATA not in tags:
        return None
    text = str(tags[_TAG_GDAL_NODATA].value).strip().strip("\x00")
    value = float(text)
    if np.issubdtype(dtype, np.integer):
        return int(value)
    return value


def _write_ascii_grid(values, transform: GeoTransform, nodata, path):
    if not math.isclose(transform.pixel_width, transform.pixel_height, rel_tol=1e-12):
        raise RasterFormatError("ESRI ASCII grids require square pixels; use GeoTIFF")
    height, width = values.shape
    if nodata is None:
        nodata = -9999
    float_data = np.issubdtype(values.dtype, np.floating)
    with open(path, "w") as fh:
        fh.write(f"ncols {width}\n")
        fh.write(f"nrows {height}\n")
        fh.write(f"xllcorner {transform.origin_lon!r}\n")
        fh.write(f"yllcorner {transform.origin_lat - height * transform.pixel_height!r}\n")
        fh.write(f"cellsize {transform.pixel_width!r}\n")
        fh.write(f"NODATA_value {_format_nodata(nodata)}\n")
        for row in values:
            if float_data:
                fh.write(" ".join(f"{v:.17g}" for v in row))
            else:
                fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")


def _read_ascii_grid(path) -> Grid:
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            key = tokens[0].lower()
            if len(tokens) == 2 and key in (
                "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value",
            ):
                header[key] = tokens[1]
            elif len(tokens) == 2 and key in ("xllcenter", "yllcenter"):
                raise RasterFormatError(f"{path}: cell-center anchored ASCII grids not supported")
            else:
                try:
                    rows.append([float(t) for t in tokens])
                except ValueError as exc:
                    raise RasterFormatError(f"{path}: unparseable data line {line!r}") from exc
    for required in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if required not in header:
            raise RasterFormatError(f"{path}: missing ASCII grid header field {required}")
    width, height = int(header["ncols"]), int(header["nrows"])
    cell = float(header["cellsize"])
    values = np.array([v for row in rows for v in row], dtype=np.float64)
    if values.size != width * height:
        raise RasterFormatError(
            f"{path}: expected {width * height} samples, found {values.size}"
        )
    values = values.reshape(height, width)
    transform = GeoTransform(
        float(header["xllcorner"]), float(header["yllcorner"]) + height * cell, cell, cell
    )
    nodata = float(header["nodata_value"]) if "nodata_value" in header else None
    return Grid(values, transform, nodata)


# ---------------------------------------------------------------------------
# Resampling


def resample_nearest(grid: Grid, target: GeoTransform, target_width: int,
                     target_height: int) -> Grid:
    """Resample ``grid`` onto a target georeference by nearest pixel center.

    Each output pixel takes the value of the input pixel containing the
    output pixel's center, which is the geographically nearest input
    center (points on a pixel boundary resolve to the pixel right/below).
    Output pixels whose center falls outside the input coverage become
    nodata; whole-grid miss raises :class:`DomainError`.
    """
    if target_width < 1 or target_height < 1:
        raise ContractError("target dimensions must be positive")
    xs = target.origin_lon + (np.arange(target_width) + 0.5) * target.pixel_width
    ys = target.origin_lat - (np.arange(target_height) + 0.5) * target.pixel_height
    src = grid.transform
    cols = np.floor((xs - src.origin_lon) / src.pixel_width).astype(np.int64)
    rows = np.floor((src.origin_lat - ys) / src.pixel_height).astype(np.int64)
    col_ok = (cols >= 0) & (cols < grid.width)
    row_ok = (rows >= 0) & (rows < grid.height)
    if not (col_ok.any() and row_ok.any()):
        raise DomainError("target grid does not intersect the source grid")
    covered = row_ok[:, None] & col_ok[None, :]
    out = grid.values[rows.clip(0, grid.height - 1)[:, None],
                      cols.clip(0, grid.width - 1)[None, :]]
    nodata = grid.nodata
    if not covered.all():
        if nodata is None:
            if np.issubdtype(out.dtype, np.floating):
                nodata = np.nan
            else:
                raise ContractError(
                    "target extends past the source grid and the integer source "
                    "has no nodata value to fill with"
                )
        out = out.copy()
        out[~covered] = nodata
    return Grid(out, target, nodata)


def downsample_percent(mask: Grid, factor: int) -> Grid:
    """Aggregate a binary mask to percent settlement cover per block.

    Each output pixel is ``100 * settled / valid`` over a ``factor x
    factor`` block.  Dimensions need not divide evenly: partial edge
    blocks are padded with nodata and nodata cells are excluded from the
    denominator, so full-coverage masks with divisible dimensions satisfy
    the exact conservation identity
    ``factor**2 * sum(percent) / 100 == settled_cell_count``.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 2:
        raise ContractError(f"factor must be an integer >= 2, got {factor}")
    if not is_binary(mask):
        raise ContractError("downsample_percent requires a {0, 1} binary mask")
    height, width = mask.shape
    out_h = -(-height // factor)
    out_w = -(-width // factor)
    valid = np.zeros((out_h * factor, out_w * factor), dtype=bool)
    vals = np.zeros_like(valid, dtype=np.float64)
    valid[:height, :width] = mask.valid_mask
    vals[:height, :width] = np.where(mask.valid_mask, mask.values, 0)
    block_valid = valid.reshape(out_h, factor, out_w, factor).sum(axis=(1, 3))
    block_set = vals.reshape(out_h, factor, out_w, factor).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        percent = 100.0 * block_set / block_valid
    percent[block_valid == 0] = np.nan
    return Grid(percent, mask.transform.scaled(factor), np.nan)
