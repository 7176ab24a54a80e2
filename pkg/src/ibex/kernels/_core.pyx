# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels; semantics mirror kernels._numpy exactly.

Single-pass fused loops over the confidence matrix avoid the temporaries
the numpy formulation allocates; everything stays single-threaded so
results are run-to-run deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, log2, pow

cnp.import_array()

Q_EPS = 1e-12
CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7

cdef double _Q_EPS = 1e-12
cdef double _LO = 1e-7
cdef double _HI = 1.0 - 1e-7
cdef double _INV_LN2 = 1.4426950408889634


cdef inline double _clamp(double x) nogil:
    if x < _LO:
        return _LO
    if x > _HI:
        return _HI
    return x


def _as_batch(y):
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"expected a [B, I] confidence matrix, got shape {y.shape}")
    return y


def sparsity_loss_grad(y):
    y = _as_batch(y)
    cdef double[:, ::1] ym = y
    cdef Py_ssize_t b = ym.shape[0], n = ym.shape[1], p, i
    grad_arr = np.empty((b, n), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    q_arr = np.empty(n, dtype=np.float64)
    g_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] q = q_arr, g = g_arr
    cdef double s, qi, qc, lq, row, dot, value = 0.0
    with nogil:
        for p in range(b):
            s = _Q_EPS
            for i in range(n):
                s += ym[p, i]
            row = 0.0
            dot = 0.0
            for i in range(n):
                qi = ym[p, i] / s
                qc = _clamp(qi)
                lq = log2(qc)
                row -= qi * lq
                if _LO < qi < _HI:
                    g[i] = -(lq + _INV_LN2)
                else:
                    g[i] = -lq
                q[i] = qi
                dot += qi * g[i]
            value += row
            for i in range(n):
                grad[p, i] = (g[i] - dot) / (s * b)
    return value / b, grad_arr


def max_activation_loss_grad(y):
    y = _as_batch(y)
    cdef double[:, ::1] ym = y
    cdef Py_ssize_t b = ym.shape[0], n = ym.shape[1], p, i
    grad_arr = np.empty((b, n), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    q_arr = np.empty(n, dtype=np.float64)
    h_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] q = q_arr, h = h_arr
    cdef double s, yi, yc, row, dot, direct, value = 0.0
    with nogil:
        for p in range(b):
            s = _Q_EPS
            for i in range(n):
                s += ym[p, i]
            row = 0.0
            dot = 0.0
            for i in range(n):
                yi = ym[p, i]
                yc = _clamp(yi)
                q[i] = yi / s
                h[i] = -log2(yc)
                row += q[i] * h[i]
                dot += q[i] * h[i]
            value += row
            for i in range(n):
                yi = ym[p, i]
                if _LO < yi < _HI:
                    direct = q[i] / (_clamp(yi)) * _INV_LN2
                else:
                    direct = 0.0
                grad[p, i] = ((h[i] - dot) / s - direct) / b
    return value / b, grad_arr


def inactive_loss_grad(y, nu, double gamma):
    y = _as_batch(y)
    nu = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[:, ::1] ym = y
    cdef double[::1] num = nu
    cdef Py_ssize_t b = ym.shape[0], n = ym.shape[1], p, i
    if num.shape[0] != n:
        raise ValueError(f"nu has shape {nu.shape}, expected ({n},)")
    grad_arr = np.empty((b, n), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    coef_arr = np.zeros(n, dtype=np.float64)
    u_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] coef = coef_arr, u = u_arr
    cdef double deficit, inv_nu, powered, value = 0.0
    with nogil:
        # stash y^(gamma-1) in grad so each element pays for one pow only
        for p in range(b):
            for i in range(n):
                powered = pow(ym[p, i], gamma - 1.0)
                grad[p, i] = powered
                u[i] += powered * ym[p, i]
        for i in range(n):
            u[i] /= b
            inv_nu = 1.0 / num[i] if num[i] > 0.0 else 0.0
            deficit = num[i] - u[i]
            if deficit > 0.0:
                value += deficit * inv_nu
                coef[i] = -(gamma / (n * b)) * inv_nu
            else:
                coef[i] = 0.0
        for p in range(b):
            for i in range(n):
                grad[p, i] = coef[i] * grad[p, i]
    return value / n, grad_arr


def upsample_bilinear(src, int out_h, int out_w):
    src = np.ascontiguousarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be at least 1x1")
    cdef double[:, ::1] sm = src
    cdef Py_ssize_t h = sm.shape[0], w = sm.shape[1], r, c
    out_arr = np.empty((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double sy, sx, fy, fx, top, bot
    cdef Py_ssize_t y0, y1, x0, x1
    with nogil:
        for r in range(out_h):
            sy = (r + 0.5) * (<double> h / out_h) - 0.5
            if sy < 0.0:
                sy = 0.0
            if sy > h - 1.0:
                sy = h - 1.0
            y0 = <Py_ssize_t> floor(sy)
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            fy = sy - y0
            for c in range(out_w):
                sx = (c + 0.5) * (<double> w / out_w) - 0.5
                if sx < 0.0:
                    sx = 0.0
                if sx > w - 1.0:
                    sx = w - 1.0
                x0 = <Py_ssize_t> floor(sx)
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                fx = sx - x0
                top = sm[y0, x0] * (1.0 - fx) + sm[y0, x1] * fx
                bot = sm[y1, x0] * (1.0 - fx) + sm[y1, x1] * fx
                out[r, c] = top * (1.0 - fy) + bot * fy
    return out_arr


def overlap_counts(maps, masks):
    maps = np.ascontiguousarray(maps, dtype=np.uint8)
    masks = np.ascontiguousarray(masks, dtype=np.uint8)
    if maps.ndim != 2 or masks.ndim != 2 or maps.shape[1] != masks.shape[1]:
        raise ValueError(
            f"incompatible shapes: maps {maps.shape}, masks {masks.shape}"
        )
    cdef unsigned char[:, ::1] a = maps
    cdef unsigned char[:, ::1] l = masks
    cdef Py_ssize_t ni = a.shape[0], nc = l.shape[0], np_ = a.shape[1]
    inter_arr = np.zeros((ni, nc), dtype=np.int64)
    area_i_arr = np.zeros(ni, dtype=np.int64)
    area_c_arr = np.zeros(nc, dtype=np.int64)
    cdef long long[:, ::1] inter = inter_arr
    cdef long long[::1] area_i = area_i_arr
    cdef long long[::1] area_c = area_c_arr
    act_i_arr = np.empty(ni, dtype=np.intp)
    act_c_arr = np.empty(nc, dtype=np.intp)
    cdef Py_ssize_t[::1] act_i = act_i_arr
    cdef Py_ssize_t[::1] act_c = act_c_arr
    cdef Py_ssize_t p, i, c, na, nb, ii, cc
    with nogil:
        # sparse accumulation: per pixel, cross the active detector and
        # concept index sets; binary data is typically very sparse
        for p in range(np_):
            na = 0
            for i in range(ni):
                if a[i, p]:
                    act_i[na] = i
                    na += 1
                    area_i[i] += 1
            nb = 0
            for c in range(nc):
                if l[c, p]:
                    act_c[nb] = c
                    nb += 1
                    area_c[c] += 1
            for ii in range(na):
                for cc in range(nb):
                    inter[act_i[ii], act_c[cc]] += 1
    return inter_arr, area_i_arr, area_c_arr
