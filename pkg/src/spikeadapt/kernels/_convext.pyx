# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels.

Direct cross-correlation over C-contiguous float64 arrays.  The input is
padded once so the loop nests are rectangular (no boundary tests), the
innermost loop always runs along the contiguous output row, and the
ubiquitous 3-wide kernel case is unrolled across taps.  Mirrors the
signatures in conv_numpy; callers guarantee contiguity and dtype.
"""

import numpy as np

cimport numpy as cnp  # noqa: F401  (needed for the buffer protocol)


def out_hw(Py_ssize_t h, Py_ssize_t w, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t padding):
    return ((h + 2 * padding - kh) // stride + 1,
            (w + 2 * padding - kw) // stride + 1)


def _padded(x, Py_ssize_t padding):
    if padding == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + w] = x
    return xp


def conv2d_forward(x_in, double[:, :, :, ::1] w,
                   Py_ssize_t stride, Py_ssize_t padding):
    cdef Py_ssize_t h_ = x_in.shape[2], w_ = x_in.shape[3]
    cdef Py_ssize_t f_ = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h_ + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (w_ + 2 * padding - kw) // stride + 1
    cdef double[:, :, :, ::1] xp = _padded(np.ascontiguousarray(x_in),
                                           padding)
    cdef Py_ssize_t n_ = xp.shape[0], c_ = xp.shape[1]
    out_arr = np.zeros((n_, f_, ho, wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, f, c, oh, ow, i, j, hi
    cdef double w0, w1, w2, coef
    with nogil:
        for n in range(n_):
            for f in range(f_):
                for c in range(c_):
                    for i in range(kh):
                        if kw == 3 and stride == 1:
                            w0 = w[f, c, i, 0]
                            w1 = w[f, c, i, 1]
                            w2 = w[f, c, i, 2]
                            for oh in range(ho):
                                hi = oh + i
                                for ow in range(wo):
                                    out[n, f, oh, ow] += (
                                        w0 * xp[n, c, hi, ow]
                                        + w1 * xp[n, c, hi, ow + 1]
                                        + w2 * xp[n, c, hi, ow + 2])
                        elif kw == 3:
                            w0 = w[f, c, i, 0]
                            w1 = w[f, c, i, 1]
                            w2 = w[f, c, i, 2]
                            for oh in range(ho):
                                hi = oh * stride + i
                                for ow in range(wo):
                                    out[n, f, oh, ow] += (
                                        w0 * xp[n, c, hi, ow * stride]
                                        + w1 * xp[n, c, hi, ow * stride + 1]
                                        + w2 * xp[n, c, hi, ow * stride + 2])
                        else:
                            for j in range(kw):
                                coef = w[f, c, i, j]
                                if coef == 0.0:
                                    continue
                                for oh in range(ho):
                                    hi = oh * stride + i
                                    for ow in range(wo):
                                        out[n, f, oh, ow] += coef * \
                                            xp[n, c, hi, ow * stride + j]
    return out_arr


def conv2d_grad_input(double[:, :, :, ::1] gy, double[:, :, :, ::1] w,
                      Py_ssize_t stride, Py_ssize_t padding,
                      Py_ssize_t h_in, Py_ssize_t w_in):
    cdef Py_ssize_t n_ = gy.shape[0], f_ = gy.shape[1]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c_ = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    gxp_arr = np.zeros((n_, c_, h_in + 2 * padding, w_in + 2 * padding))
    cdef double[:, :, :, ::1] gxp = gxp_arr
    cdef Py_ssize_t n, f, c, oh, ow, i, j, hi
    cdef double w0, w1, w2, coef, g
    with nogil:
        for n in range(n_):
            for f in range(f_):
                for c in range(c_):
                    for i in range(kh):
                        if kw == 3:
                            w0 = w[f, c, i, 0]
                            w1 = w[f, c, i, 1]
                            w2 = w[f, c, i, 2]
                            for oh in range(ho):
                                hi = oh * stride + i
                                for ow in range(wo):
                                    g = gy[n, f, oh, ow]
                                    gxp[n, c, hi, ow * stride] += w0 * g
                                    gxp[n, c, hi, ow * stride + 1] += w1 * g
                                    gxp[n, c, hi, ow * stride + 2] += w2 * g
                        else:
                            for j in range(kw):
                                coef = w[f, c, i, j]
                                if coef == 0.0:
                                    continue
                                for oh in range(ho):
                                    hi = oh * stride + i
                                    for ow in range(wo):
                                        gxp[n, c, hi, ow * stride + j] += \
                                            coef * gy[n, f, oh, ow]
    if padding == 0:
        return gxp_arr
    return np.ascontiguousarray(
        gxp_arr[:, :, padding:padding + h_in, padding:padding + w_in])


def conv2d_grad_weight(double[:, :, :, ::1] gy, x_in,
                       Py_ssize_t stride, Py_ssize_t padding,
                       Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n_ = gy.shape[0], f_ = gy.shape[1]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c_ = x_in.shape[1]
    cdef double[:, :, :, ::1] xp = _padded(np.ascontiguousarray(x_in),
                                           padding)
    gw_arr = np.zeros((f_, c_, kh, kw))
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, f, c, oh, ow, i, j, hi
    cdef double a0, a1, a2, acc, g
    with nogil:
        for n in range(n_):
            for c in range(c_):
                for i in range(kh):
                    for f in range(f_):
                        if kw == 3:
                            a0 = 0.0
                            a1 = 0.0
                            a2 = 0.0
                            for oh in range(ho):
                                hi = oh * stride + i
                                for ow in range(wo):
                                    g = gy[n, f, oh, ow]
                                    a0 += g * xp[n, c, hi, ow * stride]
                                    a1 += g * xp[n, c, hi, ow * stride + 1]
                                    a2 += g * xp[n, c, hi, ow * stride + 2]
                            gw[f, c, i, 0] += a0
                            gw[f, c, i, 1] += a1
                            gw[f, c, i, 2] += a2
                        else:
                            for j in range(kw):
                                acc = 0.0
                                for oh in range(ho):
                                    hi = oh * stride + i
                                    for ow in range(wo):
                                        acc += gy[n, f, oh, ow] * \
                                            xp[n, c, hi, ow * stride + j]
                                gw[f, c, i, j] += acc
    return gw_arr
