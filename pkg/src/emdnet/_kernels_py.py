"""Pure-numpy patch extraction kernels (fallback for the compiled core).

Both functions work on a *padded* image batch ``[N, C, Hp, Wp]`` and a
column matrix ``[N, C*kh*kw, Ho*Wo]`` whose row index runs over
``(channel, ky, kx)`` in row-major order.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)


def col2im(cols, channels, hp, wp, kh, kw, stride, ho, wo):
    n = cols.shape[0]
    cols = cols.reshape(n, channels, kh, kw, ho, wo)
    out = np.zeros((n, channels, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, i, j]
    return out
