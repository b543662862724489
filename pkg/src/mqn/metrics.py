"""Image fidelity metrics and the evaluation alignment step."""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError
from .tmo import luminance

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(target, pred, peak: float = 1.0) -> float:
    t = np.asarray(target, np.float64)
    p = np.asarray(pred, np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"shape mismatch: {t.shape} vs {p.shape}")
    mse = float(np.mean(np.square(p - t)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian(n: int, sigma: float) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation, valid windows only
    a = sliding_window_view(a, len(g), axis=0) @ g
    return sliding_window_view(a, len(g), axis=1) @ g


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    if min(x.shape) < SSIM_WINDOW:
        # single full-image window, uniform weights
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cov = ((x - mx) * (y - my)).mean()
        return float(((2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2))
                     / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)))
    g = _gaussian(SSIM_WINDOW, SSIM_SIGMA)
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    vx = _filter_valid(x * x, g) - mx * mx
    vy = _filter_valid(y * y, g) - my * my
    cov = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


def ssim(target, pred) -> float:
    """Mean structural similarity: 11x11 Gaussian windows (sigma 1.5),
    computed per channel, channel scores averaged."""
    t = np.asarray(target, np.float64)
    p = np.asarray(pred, np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"shape mismatch: {t.shape} vs {p.shape}")
    if t.ndim == 2:
        t = t[..., None]
        p = p[..., None]
    if t.ndim != 3:
        raise ShapeError("ssim expects HxW or HxWxC images")
    return float(np.mean([_ssim_channel(t[..., c], p[..., c])
                          for c in range(t.shape[2])]))


@dataclass(frozen=True)
class AlignResult:
    image: np.ndarray
    scale: float
    offset: float
    degenerate: bool


def _nearest_rank(sorted_vals: np.ndarray, q: float) -> float:
    k = max(1, math.ceil(q * sorted_vals.size))
    return float(sorted_vals[k - 1])


def percentile_align(pred, gt) -> AlignResult:
    """Linear map of pred so its 1st/99th luminance percentiles
    (nearest-rank) coincide with the ground truth's."""
    pred = np.asarray(pred, np.float32)
    gt = np.asarray(gt, np.float32)
    if pred.size == 0 or gt.size == 0:
        raise ValueError("empty image")
    lp = np.sort(luminance(pred).ravel())
    lg = np.sort(luminance(gt).ravel())
    p01, p99 = _nearest_rank(lp, 0.01), _nearest_rank(lp, 0.99)
    g01, g99 = _nearest_rank(lg, 0.01), _nearest_rank(lg, 0.99)
    if p99 == p01:
        return AlignResult(pred.copy(), 1.0, 0.0, True)
    a = (g99 - g01) / (p99 - p01)
    b = g01 - a * p01
    aligned = np.maximum(pred.astype(np.float64) * a + b, 0.0).astype(np.float32)
    return AlignResult(aligned, float(a), float(b), False)
