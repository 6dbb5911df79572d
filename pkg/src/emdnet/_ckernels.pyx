# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch extraction kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] xp, real[:, :, ::1] cols, int kh, int kw, int stride, int ho, int wo):
    cdef Py_ssize_t n, c, i, j, oy, ox, row
    cdef Py_ssize_t nn = xp.shape[0], cc = xp.shape[1]
    with nogil:
        for n in range(nn):
            for c in range(cc):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for oy in range(ho):
                            for ox in range(wo):
                                cols[n, row, oy * wo + ox] = xp[n, c, oy * stride + i, ox * stride + j]


def _col2im(real[:, :, ::1] cols, real[:, :, :, ::1] out, int kh, int kw, int stride, int ho, int wo):
    cdef Py_ssize_t n, c, i, j, oy, ox, row
    cdef Py_ssize_t nn = out.shape[0], cc = out.shape[1]
    with nogil:
        for n in range(nn):
            for c in range(cc):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for oy in range(ho):
                            for ox in range(wo):
                                out[n, c, oy * stride + i, ox * stride + j] += cols[n, row, oy * wo + ox]


def im2col(xp, int kh, int kw, int stride, int ho, int wo):
    xp = np.ascontiguousarray(xp)
    cols = np.empty((xp.shape[0], xp.shape[1] * kh * kw, ho * wo), dtype=xp.dtype)
    _im2col(xp, cols, kh, kw, stride, ho, wo)
    return cols


def col2im(cols, int channels, int hp, int wp, int kh, int kw, int stride, int ho, int wo):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((cols.shape[0], channels, hp, wp), dtype=cols.dtype)
    _col2im(cols, out, kh, kw, stride, ho, wo)
    return out
