# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels: trilinear LUT application and level remapping.

Contract-identical to ``_kernels_py``.  Lattice gradients are accumulated
into a fixed number of partial buffers that are summed in order, so the
result does not depend on the OpenMP thread count.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor, fabs, pow, log

cnp.import_array()

NAME = "cython"
cdef enum:
    N_CHUNKS = 8


cdef inline double _clip01(double v) noexcept nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef inline void _cell(double v, int nb, int* c, double* f) noexcept nogil:
    cdef double s = _clip01(v) * (nb - 1)
    cdef int ci = <int>floor(s)
    if ci > nb - 2:
        ci = nb - 2
    if ci < 0:
        ci = 0
    c[0] = ci
    f[0] = s - ci


def trilinear_forward(double[:, :, :, ::1] table, img):
    cdef double[:, :, ::1] x = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1]
    out_arr = np.zeros((h, w, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef int nb = table.shape[0]
    cdef Py_ssize_t y, xx
    cdef int i, j, k, c, dr, dg, db
    cdef double fr, fg, fb, wgt
    for y in prange(h, nogil=True, schedule="static"):
        for xx in range(w):
            _cell(x[y, xx, 0], nb, &i, &fr)
            _cell(x[y, xx, 1], nb, &j, &fg)
            _cell(x[y, xx, 2], nb, &k, &fb)
            for db in range(2):
                for dg in range(2):
                    for dr in range(2):
                        wgt = ((fr if dr else 1.0 - fr) * (fg if dg else 1.0 - fg)
                               * (fb if db else 1.0 - fb))
                        for c in range(3):
                            out[y, xx, c] += wgt * table[k + db, j + dg, i + dr, c]
    return out_arr


def trilinear_backward(double[:, :, :, ::1] table, img, grad_out):
    cdef double[:, :, ::1] x = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[:, :, ::1] go = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1]
    cdef int nb = table.shape[0]
    cdef Py_ssize_t npix = h * w
    partial_arr = np.zeros((N_CHUNKS, nb, nb, nb, 3), dtype=np.float64)
    cdef double[:, :, :, :, ::1] partial = partial_arr
    gimg_arr = np.zeros((h, w, 3), dtype=np.float64)
    cdef double[:, :, ::1] gimg = gimg_arr
    cdef Py_ssize_t chunk, p, p0, p1, y, xx
    cdef Py_ssize_t per = (npix + N_CHUNKS - 1) // N_CHUNKS
    cdef int i, j, k, c, dr, dg, db
    cdef double fr, fg, fb, wr, wg, wb, dot, g0, g1, g2
    cdef double scale = nb - 1
    for chunk in prange(N_CHUNKS, nogil=True, schedule="static"):
        p0 = chunk * per
        p1 = p0 + per
        if p1 > npix:
            p1 = npix
        for p in range(p0, p1):
            y = p // w
            xx = p - y * w
            _cell(x[y, xx, 0], nb, &i, &fr)
            _cell(x[y, xx, 1], nb, &j, &fg)
            _cell(x[y, xx, 2], nb, &k, &fb)
            g0 = 0.0
            g1 = 0.0
            g2 = 0.0
            for db in range(2):
                wb = fb if db else 1.0 - fb
                for dg in range(2):
                    wg = fg if dg else 1.0 - fg
                    for dr in range(2):
                        wr = fr if dr else 1.0 - fr
                        dot = 0.0
                        for c in range(3):
                            partial[chunk, k + db, j + dg, i + dr, c] += wr * wg * wb * go[y, xx, c]
                            dot = dot + table[k + db, j + dg, i + dr, c] * go[y, xx, c]
                        g0 = g0 + (1.0 if dr else -1.0) * wg * wb * dot
                        g1 = g1 + (1.0 if dg else -1.0) * wr * wb * dot
                        g2 = g2 + (1.0 if db else -1.0) * wr * wg * dot
            for c in range(3):
                if x[y, xx, c] < 0.0 or x[y, xx, c] > 1.0:
                    gimg[y, xx, c] = 0.0
                elif c == 0:
                    gimg[y, xx, c] = g0 * scale
                elif c == 1:
                    gimg[y, xx, c] = g1 * scale
                else:
                    gimg[y, xx, c] = g2 * scale
    grad_table = partial_arr[0].copy()
    for chunk in range(1, N_CHUNKS):
        grad_table += partial_arr[chunk]
    return grad_table, gimg_arr


def remap_level(img, double g, alpha, beta, double sigma_r, bint printed_branch=False,
                bint with_grad=False):
    cdef double[:, :, ::1] x = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[:, ::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef double[:, ::1] be = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], nc = x.shape[2]
    r_arr = np.empty((h, w, nc), dtype=np.float64)
    gshape = (int(h), int(w), int(nc)) if with_grad else (1, 1, 1)
    da_arr = np.zeros(gshape, dtype=np.float64)
    db_arr = np.zeros(gshape, dtype=np.float64)
    cdef double[:, :, ::1] r = r_arr
    cdef double[:, :, ::1] da = da_arr
    cdef double[:, :, ::1] dbt = db_arr
    cdef Py_ssize_t y, xx, c
    cdef double v, d, a, s, ratio, powed
    cdef bint detail
    for y in prange(h, nogil=True, schedule="static"):
        for xx in range(w):
            for c in range(nc):
                v = x[y, xx, c]
                d = v - g
                a = fabs(d)
                s = 1.0 if d > 0.0 else (-1.0 if d < 0.0 else 0.0)
                if printed_branch:
                    detail = v <= sigma_r
                else:
                    detail = a <= sigma_r
                if detail:
                    ratio = a / sigma_r
                    powed = pow(ratio, al[y, xx])
                    r[y, xx, c] = g + s * sigma_r * powed
                    if with_grad and a > 0.0:
                        da[y, xx, c] = s * sigma_r * powed * log(ratio)
                else:
                    r[y, xx, c] = g + s * (be[y, xx] * (a - sigma_r) + sigma_r)
                    if with_grad:
                        dbt[y, xx, c] = s * (a - sigma_r)
    if with_grad:
        return r_arr, da_arr, db_arr
    return r_arr
