"""Pure-numpy convolution kernels.

Bit-compatible with the numba backend: float accumulators start at the
bias and taps are added in (kernel-row, kernel-col, channel) order, one
f32 rounding per step. Out-of-bounds taps are skipped, never added as
zeros. Integer kernels accumulate with wrapping int arithmetic, which is
order-independent and therefore free to vectorize.
"""

import numpy as np


def _tap_window(out_n: int, in_n: int, k_off: int, pad: int, stride: int):
    """Output index range [lo, hi) for which tap k_off lands inside the input."""
    lo = max(0, -(-(pad - k_off) // stride))
    hi = min(out_n, -(-(in_n + pad - k_off) // stride))
    return lo, hi


def conv2d_f32(x, w, b, stride, pt, pl, ho, wo):
    n, h, ww, ci = x.shape
    kh, kw, _, co = w.shape
    out = np.empty((n, ho, wo, co), np.float32)
    out[:] = b
    for ky in range(kh):
        lo_h, hi_h = _tap_window(ho, h, ky, pt, stride)
        if lo_h >= hi_h:
            continue
        rs = lo_h * stride - pt + ky
        for kx in range(kw):
            lo_w, hi_w = _tap_window(wo, ww, kx, pl, stride)
            if lo_w >= hi_w:
                continue
            cs = lo_w * stride - pl + kx
            patch = x[:, rs:rs + (hi_h - lo_h - 1) * stride + 1:stride,
                      cs:cs + (hi_w - lo_w - 1) * stride + 1:stride, :]
            dst = out[:, lo_h:hi_h, lo_w:hi_w, :]
            for c in range(ci):
                dst += patch[..., c, None] * w[ky, kx, c, :]
    return out


def dwconv2d_f32(x, w, b, stride, pt, pl, ho, wo):
    n, h, ww, c = x.shape
    kh, kw = w.shape[0], w.shape[1]
    out = np.empty((n, ho, wo, c), np.float32)
    out[:] = b
    for ky in range(kh):
        lo_h, hi_h = _tap_window(ho, h, ky, pt, stride)
        if lo_h >= hi_h:
            continue
        rs = lo_h * stride - pt + ky
        for kx in range(kw):
            lo_w, hi_w = _tap_window(wo, ww, kx, pl, stride)
            if lo_w >= hi_w:
                continue
            cs = lo_w * stride - pl + kx
            patch = x[:, rs:rs + (hi_h - lo_h - 1) * stride + 1:stride,
                      cs:cs + (hi_w - lo_w - 1) * stride + 1:stride, :]
            out[:, lo_h:hi_h, lo_w:hi_w, :] += patch * w[ky, kx, :, 0]
    return out


def conv2d_int_acc(x, w, stride, pt, pl, ho, wo):
    n, h, ww, ci = x.shape
    kh, kw, _, co = w.shape
    acc = np.zeros((n, ho, wo, co), x.dtype)
    for ky in range(kh):
        lo_h, hi_h = _tap_window(ho, h, ky, pt, stride)
        if lo_h >= hi_h:
            continue
        rs = lo_h * stride - pt + ky
        for kx in range(kw):
            lo_w, hi_w = _tap_window(wo, ww, kx, pl, stride)
            if lo_w >= hi_w:
                continue
            cs = lo_w * stride - pl + kx
            patch = x[:, rs:rs + (hi_h - lo_h - 1) * stride + 1:stride,
                      cs:cs + (hi_w - lo_w - 1) * stride + 1:stride, :]
            acc[:, lo_h:hi_h, lo_w:hi_w, :] += patch @ w[ky, kx]
    return acc


def dwconv2d_int_acc(x, w, stride, pt, pl, ho, wo):
    n, h, ww, c = x.shape
    kh, kw = w.shape[0], w.shape[1]
    acc = np.zeros((n, ho, wo, c), x.dtype)
    for ky in range(kh):
        lo_h, hi_h = _tap_window(ho, h, ky, pt, stride)
        if lo_h >= hi_h:
            continue
        rs = lo_h * stride - pt + ky
        for kx in range(kw):
            lo_w, hi_w = _tap_window(wo, ww, kx, pl, stride)
            if lo_w >= hi_w:
                continue
            cs = lo_w * stride - pl + kx
            patch = x[:, rs:rs + (hi_h - lo_h - 1) * stride + 1:stride,
                      cs:cs + (hi_w - lo_w - 1) * stride + 1:stride, :]
            acc[:, lo_h:hi_h, lo_w:hi_w, :] += patch * w[ky, kx, :, 0]
    return acc
