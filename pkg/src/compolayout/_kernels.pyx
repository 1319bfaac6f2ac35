# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, INFINITY

cnp.import_array()


def splat(const double[::1] u, const double[::1] v, const double[::1] depth, const double[::1] rad,
          int width, int height):
    cdef Py_ssize_t n = u.shape[0]
    zbuf_arr = np.full((height, width), np.inf)
    idx_arr = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef long long[:, ::1] idx = idx_arr
    cdef Py_ssize_t k
    cdef int x, y, x0, x1, y0, y1, cx, cy
    cdef double uk, vk, dk, rk, r2, dx, dy
    for k in range(n):
        uk = u[k]
        vk = v[k]
        dk = depth[k]
        rk = rad[k]
        r2 = rk * rk
        cx = <int>floor(uk)
        cy = <int>floor(vk)
        x0 = <int>floor(uk - rk)
        x1 = <int>floor(uk + rk)
        y0 = <int>floor(vk - rk)
        y1 = <int>floor(vk + rk)
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        for y in range(y0, y1 + 1):
            dy = (y + 0.5) - vk
            for x in range(x0, x1 + 1):
                dx = (x + 0.5) - uk
                if dx * dx + dy * dy <= r2 or (x == cx and y == cy):
                    if dk < zbuf[y, x]:
                        zbuf[y, x] = dk
                        idx[y, x] = k
    return zbuf_arr, idx_arr


def collision_terms(const double[::1] center, double radius, const double[:, ::1] pts, const double[::1] origin):
    cdef Py_ssize_t k, n = pts.shape[0]
    cdef double ex, ey, ez, d, gap, ux, uy, uz, rx, ry, rz
    cdef double relu_sum = 0.0, lever = 0.0
    cdef double Ux = 0.0, Uy = 0.0, Uz = 0.0
    cdef double Tx = 0.0, Ty = 0.0, Tz = 0.0
    cdef long long active = 0
    for k in range(n):
        ex = pts[k, 0] - center[0]
        ey = pts[k, 1] - center[1]
        ez = pts[k, 2] - center[2]
        d = sqrt(ex * ex + ey * ey + ez * ez)
        gap = radius - d
        if gap > 0.0:
            relu_sum += gap
            active += 1
            if d > 0.0:
                ux = ex / d
                uy = ey / d
                uz = ez / d
                Ux += ux
                Uy += uy
                Uz += uz
                rx = pts[k, 0] - origin[0]
                ry = pts[k, 1] - origin[1]
                rz = pts[k, 2] - origin[2]
                Tx += ry * uz - rz * uy
                Ty += rz * ux - rx * uz
                Tz += rx * uy - ry * ux
                lever += ux * rx + uy * ry + uz * rz
    return relu_sum, active, np.array([Ux, Uy, Uz]), np.array([Tx, Ty, Tz]), lever


def depth_normals(const double[:, ::1] depth, const unsigned char[:, ::1] fg, double k):
    cdef Py_ssize_t h = depth.shape[0], w = depth.shape[1]
    out_arr = np.zeros((h, w, 3))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t x, y
    cdef bint p_ok, n_ok, has_u, has_v
    cdef double gu, gv, nx, ny, norm
    for y in range(h):
        for x in range(w):
            if not fg[y, x]:
                continue
            p_ok = x > 0 and fg[y, x - 1]
            n_ok = x < w - 1 and fg[y, x + 1]
            has_u = p_ok or n_ok
            if p_ok and n_ok:
                gu = 0.5 * (depth[y, x + 1] - depth[y, x - 1])
            elif n_ok:
                gu = depth[y, x + 1] - depth[y, x]
            elif p_ok:
                gu = depth[y, x] - depth[y, x - 1]
            else:
                gu = 0.0
            p_ok = y > 0 and fg[y - 1, x]
            n_ok = y < h - 1 and fg[y + 1, x]
            has_v = p_ok or n_ok
            if p_ok and n_ok:
                gv = 0.5 * (depth[y + 1, x] - depth[y - 1, x])
            elif n_ok:
                gv = depth[y + 1, x] - depth[y, x]
            elif p_ok:
                gv = depth[y, x] - depth[y - 1, x]
            else:
                gv = 0.0
            if not (has_u or has_v):
                out[y, x, 2] = 1.0
                continue
            nx = k * gu
            ny = -k * gv
            norm = sqrt(nx * nx + ny * ny + 1.0)
            out[y, x, 0] = nx / norm
            out[y, x, 1] = ny / norm
            out[y, x, 2] = 1.0 / norm
    return out_arr
