"""Numba-jitted convolution kernels.

Same contracts as the numpy backend (see _numpy.py); loops are written
so every output element is produced by exactly one thread, which keeps
results independent of the thread count. f32 taps accumulate in
(kernel-row, kernel-col, channel) order with one rounding per step.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def conv2d_f32(x, w, b, stride, pt, pl, ho, wo):
    n, h, ww, ci = x.shape
    kh, kw, _, co = w.shape
    out = np.empty((n, ho, wo, co), np.float32)
    for nr in prange(n * ho):
        i = nr // ho
        oy = nr % ho
        for ox in range(wo):
            for oc in range(co):
                acc = b[oc]
                for ky in range(kh):
                    iy = oy * stride - pt + ky
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * stride - pl + kx
                        if ix < 0 or ix >= ww:
                            continue
                        for c in range(ci):
                            acc += x[i, iy, ix, c] * w[ky, kx, c, oc]
                out[i, oy, ox, oc] = acc
    return out


@njit(parallel=True, cache=True)
def dwconv2d_f32(x, w, b, stride, pt, pl, ho, wo):
    n, h, ww, nc = x.shape
    kh, kw = w.shape[0], w.shape[1]
    out = np.empty((n, ho, wo, nc), np.float32)
    for nr in prange(n * ho):
        i = nr // ho
        oy = nr % ho
        for ox in range(wo):
            for c in range(nc):
                acc = b[c]
                for ky in range(kh):
                    iy = oy * stride - pt + ky
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * stride - pl + kx
                        if ix < 0 or ix >= ww:
                            continue
                        acc += x[i, iy, ix, c] * w[ky, kx, c, 0]
                out[i, oy, ox, c] = acc
    return out


@njit(parallel=True, cache=True)
def conv2d_int_acc(x, w, stride, pt, pl, ho, wo):
    n, h, ww, ci = x.shape
    kh, kw, _, co = w.shape
    acc = np.zeros((n, ho, wo, co), x.dtype)
    for nr in prange(n * ho):
        i = nr // ho
        oy = nr % ho
        for ox in range(wo):
            for ky in range(kh):
                iy = oy * stride - pt + ky
                if iy < 0 or iy >= h:
                    continue
                for kx in range(kw):
                    ix = ox * stride - pl + kx
                    if ix < 0 or ix >= ww:
                        continue
                    for c in range(ci):
                        v = x[i, iy, ix, c]
                        for oc in range(co):
                            acc[i, oy, ox, oc] += v * w[ky, kx, c, oc]
    return acc


@njit(parallel=True, cache=True)
def dwconv2d_int_acc(x, w, stride, pt, pl, ho, wo):
    n, h, ww, nc = x.shape
    kh, kw = w.shape[0], w.shape[1]
    acc = np.zeros((n, ho, wo, nc), x.dtype)
    for nr in prange(n * ho):
        i = nr // ho
        oy = nr % ho
        for ox in range(wo):
            for c in range(nc):
                s = acc[i, oy, ox, c]
                for ky in range(kh):
                    iy = oy * stride - pt + ky
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * stride - pl + kx
                        if ix < 0 or ix >= ww:
                            continue
                        s += x[i, iy, ix, c] * w[ky, kx, c, 0]
                acc[i, oy, ox, c] = s
    return acc
