import numpy as np
import pytest

from settlemap.grid import GeoTransform, Grid

DEFAULT_TRANSFORM = GeoTransform(10.0, 50.0, 0.001, 0.001)


@pytest.fixture
def transform():
    return DEFAULT_TRANSFORM


def make_grid(values, nodata=None, transform=DEFAULT_TRANSFORM, dtype=None):
    values = np.asarray(values)
    if dtype is not None:
        values = values.astype(dtype)
    return Grid(values, transform, nodata)


def flood_fill_labels(mask, connectivity=8):
    """Independent reference labeling by explicit stack-based flood fill."""
    mask = np.asarray(mask) != 0
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.int64)
    if connectivity == 8:
        neighbors = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        neighbors = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    label = 0
    for i in range(h):
        for j in range(w):
            if mask[i, j] and out[i, j] == 0:
                label += 1
                stack = [(i, j)]
                out[i, j] = label
                while stack:
                    a, b = stack.pop()
                    for da, db in neighbors:
                        x, y = a + da, b + db
                        if 0 <= x < h and 0 <= y < w and mask[x, y] and out[x, y] == 0:
                            out[x, y] = label
                            stack.append((x, y))
    return out, label


def same_partition(labels_a, labels_b):
    """True when two labelings induce the same foreground partition."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape or np.any((a > 0) != (b > 0)):
        return False
    forward = {}
    backward = {}
    for x, y in zip(a.tolist(), b.tolist()):
        if x == 0:
            continue
        if forward.setdefault(x, y) != y or backward.setdefault(y, x) != x:
            return False
    return True


def series_statistics_oracle(values, valid=None):
    """Brute-force temporal statistics of one pixel series.

    Returns (max, min, mean, std, mean_slope, count) with None where the
    statistic is undefined.  Standard deviation is the population form;
    the mean slope averages absolute differences of consecutive valid
    observations.
    """
    if valid is None:
        valid = [True] * len(values)
    kept = [v for v, ok in zip(values, valid) if ok and not np.isnan(v)]
    count = len(kept)
    if count == 0:
        return None, None, None, None, None, 0
    vmax = max(kept)
    vmin = min(kept)
    vmean = sum(kept) / count
    if count >= 2:
        vstd = float(np.sqrt(sum((v - vmean) ** 2 for v in kept) / count))
        slope = sum(abs(kept[i + 1] - kept[i]) for i in range(count - 1)) / (count - 1)
    else:
        vstd = None
        slope = None
    return vmax, vmin, vmean, vstd, slope, count
