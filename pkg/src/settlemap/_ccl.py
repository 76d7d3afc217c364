"""Connected-component labeling kernels.

The 8-connected labeler is a single-pass contour-tracing algorithm: the
raster is scanned once; each new external contour opens a label, internal
contours and interior pixels inherit it.  Visited background pixels are
marked negative so no contour is traced twice.  A plain BFS labeler
provides the 4-connected alternative.
"""

import numpy as np
from numba import njit

# eight directions, clockwise from east, in (row, col) offsets
_DR = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int64)
_DC = np.array([1, 1, 0, -1, -1, -1, 0, 1], dtype=np.int64)


@njit(cache=True)
def _next_contour_point(img, marks, i, j, d):  # pragma: no cover
    """First foreground neighbor of (i, j) searching clockwise from d.

    Background neighbors visited on the way are marked -1.  Returns
    (row, col, direction); direction -1 means the pixel is isolated.
    """
    for k in range(8):
        dd = (d + k) % 8
        ni = i + _DR[dd]
        nj = j + _DC[dd]
        if img[ni, nj] != 0:
            return ni, nj, dd
        marks[ni, nj] = -1
    return i, j, -1


@njit(cache=True)
def _trace_contour(img, marks, label, si, sj, d_init):  # pragma: no cover
    marks[si, sj] = label
    ti, tj, d = _next_contour_point(img, marks, si, sj, d_init)
    if d < 0:
        return  # isolated pixel
    ci, cj = ti, tj
    while True:
        marks[ci, cj] = label
        d = (d + 6) % 8
        ni, nj, d = _next_contour_point(img, marks, ci, cj, d)
        if ci == si and cj == sj and ni == ti and nj == tj:
            break
        ci, cj = ni, nj


@njit(cache=True)
def label_contour_tracing(mask):  # pragma: no cover
    """8-connected labels for a binary mask, assigned in raster-scan order."""
    h, w = mask.shape
    img = np.zeros((h + 2, w + 2), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            if mask[i, j] != 0:
                img[i + 1, j + 1] = 1
    marks = np.zeros((h + 2, w + 2), dtype=np.int32)
    label = 0
    for i in range(1, h + 1):
        for j in range(1, w + 1):
            if img[i, j] == 0:
                continue
            handled = False
            if marks[i, j] == 0 and img[i - 1, j] == 0:
                label += 1
                _trace_contour(img, marks, label, i, j, 7)
                handled = True
            if img[i + 1, j] == 0 and marks[i + 1, j] == 0:
                if marks[i, j] == 0:
                    marks[i, j] = marks[i, j - 1]
                _trace_contour(img, marks, marks[i, j], i, j, 3)
                handled = True
            if not handled and marks[i, j] == 0:
                marks[i, j] = marks[i, j - 1]
    out = np.zeros((h, w), dtype=np.int32)
    for i in range(h):
        for j in range(w):
            v = marks[i + 1, j + 1]
            if v > 0:
                out[i, j] = v
    return out, label


@njit(cache=True)
def label_bfs4(mask):  # pragma: no cover
    """4-connected labels by breadth-first fill, assigned in raster-scan order."""
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.int32)
    queue = np.empty(h * w, dtype=np.int64)
    label = 0
    for i in range(h):
        for j in range(w):
            if mask[i, j] == 0 or out[i, j] != 0:
                continue
            label += 1
            out[i, j] = label
            queue[0] = i * w + j
            head, tail = 0, 1
            while head < tail:
                p = queue[head]
                head += 1
                pi = p // w
                pj = p % w
                if pi > 0 and mask[pi - 1, pj] != 0 and out[pi - 1, pj] == 0:
                    out[pi - 1, pj] = label
                    queue[tail] = p - w
                    tail += 1
                if pi < h - 1 and mask[pi + 1, pj] != 0 and out[pi + 1, pj] == 0:
                    out[pi + 1, pj] = label
                    queue[tail] = p + w
                    tail += 1
                if pj > 0 and mask[pi, pj - 1] != 0 and out[pi, pj - 1] == 0:
                    out[pi, pj - 1] = label
                    queue[tail] = p - 1
                    tail += 1
                if pj < w - 1 and mask[pi, pj + 1] != 0 and out[pi, pj + 1] == 0:
                    out[pi, pj + 1] = label
                    queue[tail] = p + 1
                    tail += 1
    return out, label
