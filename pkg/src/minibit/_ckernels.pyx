# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Must stay bitwise-compatible with _pykernels."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

ctypedef fused real:
    float
    double

cdef uint64_t PCG_MULT = 6364136223846793005ULL


def pcg32_fill(state, inc, Py_ssize_t n):
    cdef uint64_t s = <uint64_t>state
    cdef uint64_t c = <uint64_t>inc
    cdef uint64_t old
    cdef uint32_t xorshifted, rot
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.uint32)
    cdef uint32_t[::1] o = out
    for i in range(n):
        old = s
        s = old * PCG_MULT + c
        xorshifted = <uint32_t>(((old >> 18) ^ old) >> 27)
        rot = <uint32_t>(old >> 59)
        o[i] = (xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))
    return out, int(s)


cdef void _im2col(real[:, :, :, ::1] x, real[:, :, :, :, :, ::1] cols,
                  int kh, int kw, int sh, int sw, int ph, int pw) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, ix
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t HO = cols.shape[4], WO = cols.shape[5]
    for n in range(N):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    for oy in range(HO):
                        iy = oy * sh + i - ph
                        if iy < 0 or iy >= H:
                            for ox in range(WO):
                                cols[n, c, i, j, oy, ox] = 0
                            continue
                        for ox in range(WO):
                            ix = ox * sw + j - pw
                            if ix < 0 or ix >= W:
                                cols[n, c, i, j, oy, ox] = 0
                            else:
                                cols[n, c, i, j, oy, ox] = x[n, c, iy, ix]


def im2col(x, int kh, int kw, int sh, int sw, int ph, int pw):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, kh, kw, sh, sw, ph, pw)
    elif x.dtype == np.float64:
        _im2col[double](x, cols, kh, kw, sh, sw, ph, pw)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols.reshape(n, c * kh * kw, ho * wo)


cdef void _col2im(real[:, :, :, :, :, ::1] cols, real[:, :, :, ::1] dx,
                  int kh, int kw, int sh, int sw, int ph, int pw) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, ix
    cdef Py_ssize_t N = dx.shape[0], C = dx.shape[1], H = dx.shape[2], W = dx.shape[3]
    cdef Py_ssize_t HO = cols.shape[4], WO = cols.shape[5]
    for n in range(N):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    for oy in range(HO):
                        iy = oy * sh + i - ph
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(WO):
                            ix = ox * sw + j - pw
                            if ix >= 0 and ix < W:
                                dx[n, c, iy, ix] += cols[n, c, i, j, oy, ox]


def col2im(cols, x_shape, int kh, int kw, int sh, int sw, int ph, int pw):
    n, c, h, w = x_shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    cols6 = np.ascontiguousarray(cols).reshape(n, c, kh, kw, ho, wo)
    dx = np.zeros((n, c, h, w), dtype=cols6.dtype)
    if cols6.dtype == np.float32:
        _col2im[float](cols6, dx, kh, kw, sh, sw, ph, pw)
    elif cols6.dtype == np.float64:
        _col2im[double](cols6, dx, kh, kw, sh, sw, ph, pw)
    else:
        raise TypeError(f"unsupported dtype {cols6.dtype}")
    return dx


cdef void _maxpool(real[:, :, :, ::1] x, real[:, :, :, ::1] y, int64_t[:, :, :, ::1] arg,
                   int kh, int kw, int sh, int sw, int ph, int pw) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, ix, best_idx
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t HO = y.shape[2], WO = y.shape[3]
    cdef real best, v
    cdef bint found
    for n in range(N):
        for c in range(C):
            for oy in range(HO):
                for ox in range(WO):
                    found = False
                    best = 0
                    best_idx = 0
                    for i in range(kh):
                        iy = oy * sh + i - ph
                        if iy < 0 or iy >= H:
                            continue
                        for j in range(kw):
                            ix = ox * sw + j - pw
                            if ix < 0 or ix >= W:
                                continue
                            v = x[n, c, iy, ix]
                            if not found or v > best:
                                best = v
                                best_idx = iy * W + ix
                                found = True
                    y[n, c, oy, ox] = best
                    arg[n, c, oy, ox] = best_idx


def maxpool_forward(x, int kh, int kw, int sh, int sw, int ph, int pw):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    if x.dtype == np.float32:
        _maxpool[float](x, y, arg, kh, kw, sh, sw, ph, pw)
    elif x.dtype == np.float64:
        _maxpool[double](x, y, arg, kh, kw, sh, sw, ph, pw)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return y, arg


def maxpool_backward(grad_out, argmax, x_shape):
    n, c, h, w = x_shape
    cdef Py_ssize_t plane = h * w
    cdef Py_ssize_t nc = n * c
    cdef Py_ssize_t per = grad_out.shape[2] * grad_out.shape[3]
    cdef Py_ssize_t p, k
    g = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(nc, per)
    a = np.ascontiguousarray(argmax, dtype=np.int64).reshape(nc, per)
    acc = np.zeros((nc, plane), dtype=np.float64)
    cdef double[:, ::1] gv = g
    cdef int64_t[:, ::1] av = a
    cdef double[:, ::1] accv = acc
    with nogil:
        for p in range(nc):
            for k in range(per):
                accv[p, av[p, k]] += gv[p, k]
    return acc.astype(grad_out.dtype).reshape(x_shape)
