# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def pupil_objective(const double[:, ::1] gx, const double[:, ::1] gy,
                    const unsigned char[:, ::1] keep, const double[:, ::1] weight):
    cdef Py_ssize_t h = gx.shape[0], w = gx.shape[1]
    cdef Py_ssize_t n = 0, i, j, k
    for i in range(h):
        for j in range(w):
            if keep[i, j]:
                n += 1
    out = np.zeros((h, w), dtype=np.float64)
    if n == 0:
        return out
    cdef double[:, ::1] obj = out
    cdef double[::1] py = np.empty(n), px = np.empty(n), pgy = np.empty(n), pgx = np.empty(n)
    k = 0
    for i in range(h):
        for j in range(w):
            if keep[i, j]:
                py[k] = i
                px[k] = j
                pgy[k] = gy[i, j]
                pgx[k] = gx[i, j]
                k += 1
    cdef double dx, dy, norm, dot, acc
    cdef Py_ssize_t ci, cj
    for ci in range(h):
        for cj in range(w):
            acc = 0.0
            for k in range(n):
                dx = px[k] - cj
                dy = py[k] - ci
                norm = sqrt(dx * dx + dy * dy)
                if norm == 0.0:
                    continue
                dot = (dx * pgx[k] + dy * pgy[k]) / norm
                acc += dot * dot
            obj[ci, cj] = weight[ci, cj] * acc / n
    return out


def zbuffer_rects(const long long[::1] x0, const long long[::1] x1,
                  const long long[::1] y0, const long long[::1] y1,
                  const double[::1] z, Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t n = z.shape[0], k, u, v, a0, a1, b0, b1
    out = np.full((height, width), -1, dtype=np.int64)
    cdef long long[:, ::1] win = out
    cdef double[:, ::1] zbuf = np.full((height, width), np.inf)
    for k in range(n):
        a0 = max(x0[k], 0)
        a1 = min(x1[k], width)
        b0 = max(y0[k], 0)
        b1 = min(y1[k], height)
        for v in range(b0, b1):
            for u in range(a0, a1):
                # strict < keeps the lowest index among equal depths
                if z[k] < zbuf[v, u]:
                    zbuf[v, u] = z[k]
                    win[v, u] = k
    return out
