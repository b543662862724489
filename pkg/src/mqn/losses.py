"""Training-objective evaluators.

All losses are mean-reduced so their magnitudes are independent of image
resolution, which is what makes a single set of combination weights
meaningful across sizes. Internal accumulation is float64.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ConvSpec, ShapeError

_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    l2: float = 1.0
    cosine: float = 0.1
    fr: float = 0.05

    def __post_init__(self):
        if min(self.l1, self.l2, self.cosine, self.fr) < 0:
            raise ValueError("loss weights must be nonnegative")


def _pair(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(target, pred) -> float:
    t, p = _pair(target, pred)
    return float(np.mean(np.abs(p - t)))


def l2_loss(target, pred) -> float:
    t, p = _pair(target, pred)
    return float(np.sqrt(np.mean(np.square(p - t))))


def cosine_loss(target, pred) -> float:
    """1 - mean per-pixel cosine similarity of the RGB vectors. Pixels
    where either vector is (near) zero count as fully similar, so
    identical images always score 0."""
    t, p = _pair(target, pred)
    if t.shape[-1] != 3:
        raise ShapeError("cosine loss needs 3-channel images")
    dots = np.sum(t * p, axis=-1)
    nt = np.linalg.norm(t, axis=-1)
    npr = np.linalg.norm(p, axis=-1)
    degenerate = (nt < _ZERO_NORM) | (npr < _ZERO_NORM)
    sim = np.where(degenerate, 1.0, dots / np.where(degenerate, 1.0, nt * npr))
    return float(1.0 - np.mean(sim))


def fr_loss(target, pred, extractor) -> float:
    """Sum over feature stages of the mean absolute feature difference."""
    t, p = _pair(target, pred)
    ft = extractor(t)
    fp = extractor(p)
    if len(ft) != len(fp):
        raise ValueError("extractor returned inconsistent stage counts")
    total = 0.0
    for a, b in zip(ft, fp):
        if a.shape != b.shape:
            raise ShapeError("extractor stages disagree in shape")
        total += float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))
    return total


def combined_loss(target, pred, extractor, w: LossWeights = LossWeights()) -> float:
    return (w.l1 * l1_loss(target, pred)
            + w.l2 * l2_loss(target, pred)
            + w.cosine * cosine_loss(target, pred)
            + w.fr * fr_loss(target, pred, extractor))


class SeededFeatureExtractor:
    """Small fixed-seed convolutional feature extractor: three stride-2
    3x3 stages with ReLU, standing in for a pretrained perceptual
    network. Deterministic for a given seed."""

    def __init__(self, seed: int = 2024, channels=(8, 16, 24)):
        rng = np.random.default_rng(seed)
        self.stages = []
        cin = 3
        for cout in channels:
            w = rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), (3, 3, cin, cout)).astype(np.float32)
            self.stages.append((w, np.zeros(cout, np.float32)))
            cin = cout

    def __call__(self, img):
        x = np.asarray(img, np.float32)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4:
            raise ShapeError("extractor expects an image or an NHWC batch")
        feats = []
        for w, b in self.stages:
            x = ops.activation(ops.conv2d(x, w, b, ConvSpec(3, 3, 2, "same")), "relu")
            feats.append(x)
        return feats
