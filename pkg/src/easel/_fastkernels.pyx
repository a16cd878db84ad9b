# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: conv2d and bilinear affine sampling, forward and
backward. Mirrors easel.kernels_numpy exactly; see that module for the
reference semantics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND = "compiled"


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] k):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t co = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((n, co, h, w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, y, xx, i, j, sy, sx
    cdef double acc
    for b in range(n):
        for o in range(co):
            for y in range(h):
                for xx in range(w):
                    acc = 0.0
                    for c in range(ci):
                        for i in range(kh):
                            sy = y + i - ph
                            if sy < 0 or sy >= h:
                                continue
                            for j in range(kw):
                                sx = xx + j - pw
                                if sx < 0 or sx >= w:
                                    continue
                                acc += x[b, c, sy, sx] * k[o, c, i, j]
                    out[b, o, y, xx] = acc
    return out_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] k,
                    double[:, :, :, ::1] gout):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t co = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    gx_arr = np.zeros((n, ci, h, w))
    gk_arr = np.zeros((co, ci, kh, kw))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gk = gk_arr
    cdef Py_ssize_t b, o, c, y, xx, i, j, sy, sx
    cdef double g
    for b in range(n):
        for o in range(co):
            for y in range(h):
                for xx in range(w):
                    g = gout[b, o, y, xx]
                    if g == 0.0:
                        continue
                    for c in range(ci):
                        for i in range(kh):
                            sy = y + i - ph
                            if sy < 0 or sy >= h:
                                continue
                            for j in range(kw):
                                sx = xx + j - pw
                                if sx < 0 or sx >= w:
                                    continue
                                gx[b, c, sy, sx] += g * k[o, c, i, j]
                                gk[o, c, i, j] += g * x[b, c, sy, sx]
    return gx_arr, gk_arr


def affine_sample_forward(double[:, ::1] img, double[::1] theta,
                          Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t hi = img.shape[0], wi = img.shape[1]
    out_arr = np.zeros((out_h, out_w))
    cdef double[:, ::1] out = out_arr
    cdef double t0 = theta[0], t1 = theta[1], t2 = theta[2]
    cdef double t3 = theta[3], t4 = theta[4], t5 = theta[5]
    cdef Py_ssize_t i, j, r0, c0
    cdef double sr, sc, dr, dc, acc
    for i in range(out_h):
        for j in range(out_w):
            sr = t0 * i + t1 * j + t2
            sc = t3 * i + t4 * j + t5
            r0 = <Py_ssize_t>floor(sr)
            c0 = <Py_ssize_t>floor(sc)
            dr = sr - floor(sr)
            dc = sc - floor(sc)
            acc = 0.0
            if 0 <= r0 < hi and 0 <= c0 < wi:
                acc += (1 - dr) * (1 - dc) * img[r0, c0]
            if 0 <= r0 < hi and 0 <= c0 + 1 < wi:
                acc += (1 - dr) * dc * img[r0, c0 + 1]
            if 0 <= r0 + 1 < hi and 0 <= c0 < wi:
                acc += dr * (1 - dc) * img[r0 + 1, c0]
            if 0 <= r0 + 1 < hi and 0 <= c0 + 1 < wi:
                acc += dr * dc * img[r0 + 1, c0 + 1]
            out[i, j] = acc
    return out_arr


def affine_sample_backward(double[:, ::1] img, double[::1] theta,
                           double[:, ::1] gout):
    cdef Py_ssize_t hi = img.shape[0], wi = img.shape[1]
    cdef Py_ssize_t out_h = gout.shape[0], out_w = gout.shape[1]
    gimg_arr = np.zeros((hi, wi))
    gtheta_arr = np.zeros(6)
    cdef double[:, ::1] gimg = gimg_arr
    cdef double[::1] gtheta = gtheta_arr
    cdef double t0 = theta[0], t1 = theta[1], t2 = theta[2]
    cdef double t3 = theta[3], t4 = theta[4], t5 = theta[5]
    cdef Py_ssize_t i, j, r0, c0
    cdef double sr, sc, dr, dc, g, v00, v01, v10, v11, gr, gc
    for i in range(out_h):
        for j in range(out_w):
            g = gout[i, j]
            sr = t0 * i + t1 * j + t2
            sc = t3 * i + t4 * j + t5
            r0 = <Py_ssize_t>floor(sr)
            c0 = <Py_ssize_t>floor(sc)
            dr = sr - floor(sr)
            dc = sc - floor(sc)
            v00 = img[r0, c0] if (0 <= r0 < hi and 0 <= c0 < wi) else 0.0
            v01 = img[r0, c0 + 1] if (0 <= r0 < hi and 0 <= c0 + 1 < wi) else 0.0
            v10 = img[r0 + 1, c0] if (0 <= r0 + 1 < hi and 0 <= c0 < wi) else 0.0
            v11 = img[r0 + 1, c0 + 1] if (0 <= r0 + 1 < hi and 0 <= c0 + 1 < wi) else 0.0
            if g != 0.0:
                if 0 <= r0 < hi and 0 <= c0 < wi:
                    gimg[r0, c0] += (1 - dr) * (1 - dc) * g
                if 0 <= r0 < hi and 0 <= c0 + 1 < wi:
                    gimg[r0, c0 + 1] += (1 - dr) * dc * g
                if 0 <= r0 + 1 < hi and 0 <= c0 < wi:
                    gimg[r0 + 1, c0] += dr * (1 - dc) * g
                if 0 <= r0 + 1 < hi and 0 <= c0 + 1 < wi:
                    gimg[r0 + 1, c0 + 1] += dr * dc * g
            gr = g * (-(1 - dc) * v00 - dc * v01 + (1 - dc) * v10 + dc * v11)
            gc = g * (-(1 - dr) * v00 + (1 - dr) * v01 - dr * v10 + dr * v11)
            gtheta[0] += gr * i
            gtheta[1] += gr * j
            gtheta[2] += gr
            gtheta[3] += gc * i
            gtheta[4] += gc * j
            gtheta[5] += gc
    return gimg_arr, gtheta_arr
