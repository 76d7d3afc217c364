"""Accuracy-assessment protocol: sampling design, block agreement, metrics.

The assessment unit is a 3x3 block of 10 m cells.  Reference cells carry
one of four labels (Buildings, Building Lots, Roads/Paved, None), the
classification side carries a binary settlement flag per cell.  Three
settlement definitions map reference labels to binary settlement, and
four agreement criteria decide how a block contributes to the confusion
matrix:

1. each of the 9 cells is compared individually (cell granularity);
2. majority over the block on both sides;
3. classification majority vs reference "at least one settlement cell";
4. "at least one settlement cell" on both sides.

Metrics are the Kappa coefficient, producer's and user's accuracies per
class, and the average accuracy (mean of the two producer's accuracies).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractError, DomainError
from .grid import Grid

__all__ = [
    "REFERENCE_LABELS",
    "SettlementDefinition",
    "CRITERIA",
    "AssessmentBlock",
    "block_agreement",
    "ConfusionMatrix",
    "MetricsReport",
    "compute_metrics",
    "kappa_category",
    "TileSummary",
    "stratify_tiles",
    "draw_samples",
    "blocks_from_mask",
    "assess_blocks",
    "write_metrics_csv",
    "read_reference_labels",
    "write_reference_labels",
]

log = logging.getLogger(__name__)

REFERENCE_LABELS = ("B", "L", "R", "N")
CRITERIA = (1, 2, 3, 4)
BLOCK_CELLS = 9


class SettlementDefinition(Enum):
    """Which reference labels count as settlement."""

    BUILDINGS_ONLY = frozenset("B")
    BUILDINGS_AND_LOTS = frozenset("BL")
    BUILDINGS_LOTS_ROADS = frozenset("BLR")

    @property
    def label_set(self) -> frozenset:
        return self.value

    @property
    def short_name(self) -> str:
        return {"BUILDINGS_ONLY": "buildings",
                "BUILDINGS_AND_LOTS": "buildings+lots",
                "BUILDINGS_LOTS_ROADS": "buildings+lots+roads"}[self.name]


@dataclass(frozen=True)
class AssessmentBlock:
    """One 3x3 assessment unit: 9 reference labels and 9 classified flags.

    Cells are stored in row-major order.  ``center`` is an optional
    (lon, lat) tag used by the label files.
    """

    reference: tuple
    classified: tuple
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if len(self.reference) != BLOCK_CELLS or len(self.classified) != BLOCK_CELLS:
            raise ContractError("assessment blocks have exactly 9 cells")
        for label in self.reference:
            if label not in REFERENCE_LABELS:
                raise ContractError(f"unknown reference label {label!r}")


def block_agreement(block: AssessmentBlock, definition: SettlementDefinition,
                    criterion: int) -> list[tuple[bool, bool]]:
    """(classified, reference) unit outcomes of one block under one criterion.

    Criterion 1 yields nine cell-level outcomes, criteria 2 to 4 one
    block-level outcome; agreement means the two flags of an outcome are
    equal.  A 3x3 block cannot tie under the majority rule.
    """
    if criterion not in CRITERIA:
        raise ContractError(f"criterion must be in {CRITERIA}, got {criterion}")
    labels = definition.label_set
    ref = [lab in labels for lab in block.reference]
    cls = [bool(c) for c in block.classified]
    if criterion == 1:
        return list(zip(cls, ref))
    ref_majority = sum(ref) > BLOCK_CELLS // 2
    cls_majority = sum(cls) > BLOCK_CELLS // 2
    ref_any = any(ref)
    cls_any = any(cls)
    if criterion == 2:
        return [(cls_majority, ref_majority)]
    if criterion == 3:
        return [(cls_majority, ref_any)]
    return [(cls_any, ref_any)]


@dataclass
class ConfusionMatrix:
    """Binary confusion counts with settlement as the positive class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, classified: bool, reference: bool, weight: int = 1) -> None:
        if classified and reference:
            self.tp += weight
        elif classified and not reference:
            self.fp += weight
        elif reference:
            self.fn += weight
        else:
            self.tn += weight

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


_KAPPA_SCALE = (
    (0.20, "slight"),
    (0.40, "fair"),
    (0.60, "moderate"),
    (0.80, "substantial"),
    (1.00, "perfect"),
)


def kappa_category(kappa: float | None) -> str:
    """Verbal agreement category for a kappa value."""
    if kappa is None:
        return "undefined"
    if kappa < 0:
        return "no agreement"
    for upper, name in _KAPPA_SCALE:
        if kappa <= upper:
            return name
    return "perfect"


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy figures in percent; ``None`` marks an undefined ratio."""

    kappa: float | None
    pa_s: float | None
    pa_ns: float | None
    ua_s: float | None
    ua_ns: float | None
    aa: float | None
    kappa_verbal: str
    total: int


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def compute_metrics(matrix: ConfusionMatrix) -> MetricsReport:
    """Kappa, producer's/user's accuracies, and average accuracy.

    Undefined ratios (zero denominators, or a one-class matrix for kappa)
    are reported as ``None`` rather than zero.
    """
    if matrix.total == 0:
        raise DomainError("cannot compute metrics of an empty confusion matrix")
    tp, fp, fn, tn = matrix.tp, matrix.fp, matrix.fn, matrix.tn
    n = matrix.total
    pa_s = _ratio(tp, tp + fn)
    pa_ns = _ratio(tn, tn + fp)
    ua_s = _ratio(tp, tp + fp)
    ua_ns = _ratio(tn, tn + fn)
    aa = None if pa_s is None or pa_ns is None else (pa_s + pa_ns) / 2.0
    p_obs = (tp + tn) / n
    p_exp = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n)
    kappa = None if p_exp == 1.0 else (p_obs - p_exp) / (1.0 - p_exp)
    pct = lambda v: None if v is None else 100.0 * v
    return MetricsReport(
        kappa=kappa,
        pa_s=pct(pa_s),
        pa_ns=pct(pa_ns),
        ua_s=pct(ua_s),
        ua_ns=pct(ua_ns),
        aa=pct(aa),
        kappa_verbal=kappa_category(kappa),
        total=n,
    )


# ---------------------------------------------------------------------------
# Sampling design


@dataclass(frozen=True)
class TileSummary:
    """Stratification input: settlement object count and settlement area per tile."""

    tile_id: str
    object_count: int
    settlement_area: float

    @property
    def ratio(self) -> float:
        if self.settlement_area <= 0:
            raise DomainError(f"tile {self.tile_id} has no settlement area")
        return self.object_count / self.settlement_area


def stratify_tiles(tiles: list[TileSummary], n_strata: int = 50, seed=0) -> list[str]:
    """Pick one tile per ratio stratum, ``n_strata`` strata over even percentiles.

    Stratum i covers the half-open interval (P_{2(i-1)}, P_{2i}] of the
    object-count-to-area ratio.  Empty strata yield no tile and are
    logged.  If every tile has the same ratio the strata degenerate and a
    plain uniform draw of ``n_strata`` distinct tiles is used instead.
    """
    if len(tiles) < n_strata:
        raise DomainError(f"need at least {n_strata} tiles, got {len(tiles)}")
    ratios = np.array([t.ratio for t in tiles])
    rng = np.random.default_rng(seed)
    if np.all(ratios == ratios[0]):
        log.warning("all tile ratios identical; falling back to a uniform draw")
        chosen = rng.choice(len(tiles), size=n_strata, replace=False)
        return [tiles[int(i)].tile_id for i in chosen]
    edges = np.percentile(ratios, np.linspace(0.0, 100.0, n_strata + 1))
    selected: list[str] = []
    for i in range(n_strata):
        lo, hi = edges[i], edges[i + 1]
        members = np.flatnonzero((ratios > lo) & (ratios <= hi))
        if members.size == 0:
            log.warning("stratum %d (%g, %g] is empty", i + 1, lo, hi)
            continue
        selected.append(tiles[int(rng.choice(members))].tile_id)
    return selected


def draw_samples(mask: Grid, n_settlement: int = 1000, n_non_settlement: int = 1000,
                 seed=0) -> np.ndarray:
    """Draw block centers stratified by map class, blocks fully inside the tile.

    Returns an (n, 2) array of (row, col) centers: first the settlement
    draws, then the non-settlement draws.  Centers are unique; a class
    with too few interior pixels raises DomainError with the counts.
    """
    h, w = mask.shape
    if h < 3 or w < 3:
        raise DomainError("tile too small for 3x3 assessment blocks")
    interior = np.zeros((h, w), dtype=bool)
    interior[1:-1, 1:-1] = True
    settled = (mask.values != 0) & mask.valid_mask
    rng = np.random.default_rng(seed)
    out = []
    for want, cls_mask, name in (
        (n_settlement, settled, "settlement"),
        (n_non_settlement, ~settled, "non-settlement"),
    ):
        pool = np.flatnonzero(cls_mask & interior)
        if pool.size < want:
            raise DomainError(
                f"tile has only {pool.size} interior {name} pixels, need {want}"
            )
        chosen = rng.choice(pool, size=want, replace=False)
        out.append(np.stack([chosen // w, chosen % w], axis=1))
    return np.concatenate(out, axis=0)


def blocks_from_mask(mask: Grid, centers: np.ndarray,
                     reference: list[tuple]) -> list[AssessmentBlock]:
    """Assemble assessment blocks: classification cells from the mask under test."""
    if len(centers) != len(reference):
        raise ContractError("one reference label tuple is needed per center")
    settled = (mask.values != 0) & mask.valid_mask
    blocks = []
    for (row, col), labels in zip(centers, reference):
        if not (1 <= row < mask.height - 1 and 1 <= col < mask.width - 1):
            raise ContractError(f"block center ({row}, {col}) is not interior")
        cells = settled[row - 1:row + 2, col - 1:col + 2].ravel()
        lon, lat = mask.transform.pixel_center(int(row), int(col))
        blocks.append(AssessmentBlock(
            reference=tuple(labels),
            classified=tuple(bool(c) for c in cells),
            center=(lon, lat),
        ))
    return blocks


def assess_blocks(blocks: list[AssessmentBlock]) -> dict:
    """Confusion matrix and metrics for every (definition, criterion) pair.

    Returns ``{(definition, criterion): (ConfusionMatrix, MetricsReport)}``
    covering all 12 combinations.  Criterion 1 counts cells, criteria 2-4
    count blocks.
    """
    if not blocks:
        raise DomainError("no assessment blocks to evaluate")
    results = {}
    for definition in SettlementDefinition:
        for criterion in CRITERIA:
            matrix = ConfusionMatrix()
            for block in blocks:
                for classified, reference in block_agreement(block, definition, criterion):
                    matrix.add(classified, reference)
            results[(definition, criterion)] = (matrix, compute_metrics(matrix))
    return results


def write_metrics_csv(results: dict, path) -> None:
    """Machine-readable metrics table keyed by (definition, criterion)."""
    fmt = lambda v: "" if v is None else f"{v:.6f}"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "definition", "criterion", "units", "kappa", "kappa_verbal",
            "pa_s_pct", "pa_ns_pct", "ua_s_pct", "ua_ns_pct", "aa_pct",
            "tp", "fp", "fn", "tn",
        ])
        for (definition, criterion), (matrix, report) in sorted(
            results.items(), key=lambda kv: (kv[0][0].name, kv[0][1])
        ):
            writer.writerow([
                definition.short_name, criterion, report.total,
                fmt(report.kappa), report.kappa_verbal,
                fmt(report.pa_s), fmt(report.pa_ns),
                fmt(report.ua_s), fmt(report.ua_ns), fmt(report.aa),
                matrix.tp, matrix.fp, matrix.fn, matrix.tn,
            ])


# ---------------------------------------------------------------------------
# Reference-label files


def write_reference_labels(path, centers_lonlat: list[tuple[float, float]],
                           labels: list[tuple]) -> None:
    """One record per block: center lon, lat, then 9 labels in row-major order."""
    if len(centers_lonlat) != len(labels):
        raise ContractError("need one label tuple per center")
    with open(path, "w") as fh:
        fh.write("# lon lat cell1..cell9 (B=building L=lot R=road/paved N=none)\n")
        for (lon, lat), cells in zip(centers_lonlat, labels):
            if len(cells) != BLOCK_CELLS:
                raise ContractError("each record needs 9 cell labels")
            fh.write(f"{lon!r} {lat!r} " + " ".join(cells) + "\n")


def read_reference_labels(path) -> tuple[list[tuple[float, float]], list[tuple]]:
    centers = []
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) != 2 + BLOCK_CELLS:
                raise ContractError(f"{path}:{lineno}: expected lon lat + 9 labels")
            cells = tuple(t.upper() for t in tokens[2:])
            for cell in cells:
                if cell not in REFERENCE_LABELS:
                    raise ContractError(f"{path}:{lineno}: unknown label {cell!r}")
            centers.append((float(tokens[0]), float(tokens[1])))
            labels.append(cells)
    return centers, labels
