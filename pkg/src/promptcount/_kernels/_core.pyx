# cython: language_level=3
"""Compiled kernels: pairwise IoU, negative dedup, Gaussian splatting.

Mirrors _ref.py operation for operation. The IoU expression keeps the same
evaluation order as the NumPy path and the extension is compiled with FMA
contraction disabled, so both backends return bit-identical floats and the
strict-< dedup decision can never differ between them.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor

cnp.import_array()


def pairwise_iou(cnp.float64_t[:, ::1] a, cnp.float64_t[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double ix1, iy1, ix2, iy2, iw, ih, inter, area_a, area_b, union
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            ix1 = a[i, 0] if a[i, 0] > b[j, 0] else b[j, 0]
            iy1 = a[i, 1] if a[i, 1] > b[j, 1] else b[j, 1]
            ix2 = a[i, 2] if a[i, 2] < b[j, 2] else b[j, 2]
            iy2 = a[i, 3] if a[i, 3] < b[j, 3] else b[j, 3]
            iw = ix2 - ix1
            if iw < 0.0:
                iw = 0.0
            ih = iy2 - iy1
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            union = area_a + area_b - inter
            out[i, j] = inter / union
    return out_arr


def dedup_keep(cnp.float64_t[:, ::1] negatives, cnp.float64_t[:, ::1] positives, double tau_iou):
    cdef Py_ssize_t n = negatives.shape[0]
    cdef Py_ssize_t m = positives.shape[0]
    out_arr = np.ones(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] out = out_arr
    if m == 0:
        return out_arr
    cdef Py_ssize_t i, j
    cdef double ix1, iy1, ix2, iy2, iw, ih, inter, area_n, area_p, union, iou
    for i in range(n):
        area_n = (negatives[i, 2] - negatives[i, 0]) * (negatives[i, 3] - negatives[i, 1])
        for j in range(m):
            ix1 = negatives[i, 0] if negatives[i, 0] > positives[j, 0] else positives[j, 0]
            iy1 = negatives[i, 1] if negatives[i, 1] > positives[j, 1] else positives[j, 1]
            ix2 = negatives[i, 2] if negatives[i, 2] < positives[j, 2] else positives[j, 2]
            iy2 = negatives[i, 3] if negatives[i, 3] < positives[j, 3] else positives[j, 3]
            iw = ix2 - ix1
            if iw < 0.0:
                iw = 0.0
            ih = iy2 - iy1
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            area_p = (positives[j, 2] - positives[j, 0]) * (positives[j, 3] - positives[j, 1])
            union = area_n + area_p - inter
            iou = inter / union
            if not (iou < tau_iou):
                out[i] = 0
                break
    return out_arr


def gaussian_splat(
    cnp.float64_t[:, ::1] points,
    int height,
    int width,
    double sigma,
    double truncate,
    double scale,
):
    grid_arr = np.zeros((height, width), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] grid = grid_arr
    cdef Py_ssize_t n = points.shape[0]
    cdef double radius = truncate * sigma
    cdef double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma)
    cdef Py_ssize_t k, r, c
    cdef Py_ssize_t r0, r1, c0, c1
    cdef double px, py, dx, dy, total, norm, val
    for k in range(n):
        px = points[k, 0]
        py = points[k, 1]
        c0 = <Py_ssize_t>ceil(px - radius)
        if c0 < 0:
            c0 = 0
        c1 = <Py_ssize_t>floor(px + radius)
        if c1 > width - 1:
            c1 = width - 1
        r0 = <Py_ssize_t>ceil(py - radius)
        if r0 < 0:
            r0 = 0
        r1 = <Py_ssize_t>floor(py + radius)
        if r1 > height - 1:
            r1 = height - 1
        if c0 > c1 or r0 > r1:
            _nearest_deposit(grid, height, width, px, py, scale)
            continue
        total = 0.0
        for r in range(r0, r1 + 1):
            dy = <double>r - py
            for c in range(c0, c1 + 1):
                dx = <double>c - px
                total += exp(-(dy * dy + dx * dx) * inv_two_sigma_sq)
        if total <= 0.0:
            _nearest_deposit(grid, height, width, px, py, scale)
            continue
        norm = scale / total
        for r in range(r0, r1 + 1):
            dy = <double>r - py
            for c in range(c0, c1 + 1):
                dx = <double>c - px
                val = exp(-(dy * dy + dx * dx) * inv_two_sigma_sq)
                grid[r, c] += val * norm
    return grid_arr


cdef inline void _nearest_deposit(
    cnp.float64_t[:, ::1] grid, int height, int width, double px, double py, double scale
):
    cdef Py_ssize_t r = <Py_ssize_t>floor(py + 0.5)
    cdef Py_ssize_t c = <Py_ssize_t>floor(px + 0.5)
    if r < 0:
        r = 0
    if r > height - 1:
        r = height - 1
    if c < 0:
        c = 0
    if c > width - 1:
        c = width - 1
    grid[r, c] += scale
