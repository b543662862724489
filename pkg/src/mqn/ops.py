"""Float32 layer operations shared by every network block.

Convolutions dispatch to the active kernel backend; the remaining ops
are cheap elementwise/reduction work done directly in numpy (reductions
run in float64 internally for stability, outputs are float32).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import ConvSpec, ShapeError, conv_output_shape, pad_before, require_nhwc

# Smallest/largest f32 strictly inside (0,1) and (-1,1); saturating
# activations are nudged onto these so the open-interval contract
# survives f32 rounding.
_F32_BELOW_ONE = np.nextafter(np.float32(1.0), np.float32(0.0))
_F32_ABOVE_ZERO = np.nextafter(np.float32(0.0), np.float32(1.0))


@dataclass(frozen=True)
class BnParams:
    """Inference-time batch-norm statistics and affine."""
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-3


def conv2d(x, w, b, spec: ConvSpec):
    require_nhwc(x, "input", np.float32)
    if w.ndim != 4:
        raise ShapeError("weights must be (kh, kw, Cin, Cout)")
    if spec.groups != 1:
        raise ShapeError("conv2d handles groups=1 only; use depthwise_conv2d")
    if w.shape[0] != spec.kernel_h or w.shape[1] != spec.kernel_w:
        raise ShapeError("weight kernel extents disagree with spec")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"input C={x.shape[3]} != weight Cin={w.shape[2]}")
    if x.shape[1] == 0 or x.shape[2] == 0:
        raise ShapeError("zero-sized spatial input")
    b = np.ascontiguousarray(b, np.float32)
    if b.shape != (w.shape[3],):
        raise ShapeError("bias length must equal Cout")
    _, ho, wo, _ = conv_output_shape(x.shape, w.shape, spec)
    pt = pad_before(x.shape[1], spec.kernel_h, spec.stride, spec.padding)
    pl = pad_before(x.shape[2], spec.kernel_w, spec.stride, spec.padding)
    return kernels.conv2d_f32(np.ascontiguousarray(x), np.ascontiguousarray(w, np.float32),
                              b, spec.stride, pt, pl, ho, wo)


def depthwise_conv2d(x, w, b, spec: ConvSpec):
    require_nhwc(x, "input", np.float32)
    if w.ndim != 4 or w.shape[3] != 1:
        raise ShapeError("depthwise weights must be (kh, kw, C, 1)")
    if w.shape[2] != x.shape[3]:
        raise ShapeError(f"weight channel dim {w.shape[2]} != input C {x.shape[3]}")
    if x.shape[1] == 0 or x.shape[2] == 0:
        raise ShapeError("zero-sized spatial input")
    b = np.ascontiguousarray(b, np.float32)
    if b.shape != (x.shape[3],):
        raise ShapeError("bias length must equal C")
    _, ho, wo, _ = conv_output_shape(x.shape, (w.shape[0], w.shape[1], x.shape[3], x.shape[3]),
                                     ConvSpec(spec.kernel_h, spec.kernel_w, spec.stride,
                                              spec.padding, x.shape[3]))
    pt = pad_before(x.shape[1], spec.kernel_h, spec.stride, spec.padding)
    pl = pad_before(x.shape[2], spec.kernel_w, spec.stride, spec.padding)
    return kernels.dwconv2d_f32(np.ascontiguousarray(x), np.ascontiguousarray(w, np.float32),
                                b, spec.stride, pt, pl, ho, wo)


def fold_batch_norm(w, b, bn: BnParams):
    """Fold BN into the preceding conv: returns (w', b') with
    conv(x, w') + b' == BN(conv(x, w) + b) elementwise.
    """
    if np.any(np.asarray(bn.var) < 0):
        raise ValueError("negative variance")
    gamma = np.asarray(bn.gamma, np.float64)
    cout = gamma.shape[0]
    if w.shape[3] == cout:
        axis = 3
    elif w.shape[3] == 1 and w.shape[2] == cout:
        axis = 2  # depthwise layout
    else:
        raise ShapeError("bn vectors must match the weight output channels")
    scale = gamma / np.sqrt(np.asarray(bn.var, np.float64) + bn.eps)
    shaped = scale.reshape([-1 if i == axis else 1 for i in range(4)])
    w2 = (w.astype(np.float64) * shaped).astype(np.float32)
    b2 = ((np.asarray(b, np.float64) - np.asarray(bn.mean, np.float64)) * scale
          + np.asarray(bn.beta, np.float64)).astype(np.float32)
    return w2, b2


def activation(x, kind: str):
    require_nhwc(x, "input", np.float32)
    if kind == "relu":
        return np.maximum(x, np.float32(0.0))
    if kind == "relu6":
        return np.minimum(np.maximum(x, np.float32(0.0)), np.float32(6.0))
    if kind == "sigmoid":
        y = np.empty_like(x)
        np.negative(x, out=y)
        with np.errstate(over="ignore"):
            np.exp(y, out=y)
            y += np.float32(1.0)
            np.divide(np.float32(1.0), y, out=y)
        return np.clip(y, _F32_ABOVE_ZERO, _F32_BELOW_ONE)
    if kind == "tanh":
        return np.clip(np.tanh(x), -_F32_BELOW_ONE, _F32_BELOW_ONE)
    raise ValueError(f"unknown activation {kind!r}")


def upsample_nearest(x, factor: int):
    require_nhwc(x, "input")
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return x
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)


def concat_channels(a, b):
    require_nhwc(a, "a")
    require_nhwc(b, "b")
    if a.shape[:3] != b.shape[:3]:
        raise ShapeError(f"N,H,W mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=3)


def global_avg_pool(x):
    require_nhwc(x, "input", np.float32)
    if x.shape[1] == 0 or x.shape[2] == 0:
        raise ShapeError("zero spatial size")
    return x.mean(axis=(1, 2), keepdims=True, dtype=np.float64).astype(np.float32)


def instance_norm(x, gamma, beta, eps: float = 1e-5):
    require_nhwc(x, "input", np.float32)
    if x.shape[1] == 0 or x.shape[2] == 0:
        raise ShapeError("zero spatial size")
    if eps <= 0:
        raise ValueError("eps must be positive")
    gamma = np.asarray(gamma, np.float64)
    beta = np.asarray(beta, np.float64)
    if gamma.shape != (x.shape[3],) or beta.shape != (x.shape[3],):
        raise ShapeError("gamma/beta must have length C")
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=(1, 2), keepdims=True)
    var = np.square(x64 - mu).mean(axis=(1, 2), keepdims=True)  # population
    y = (x64 - mu) / np.sqrt(var + eps) * gamma + beta
    return y.astype(np.float32)


def conv_macs(kh, kw, cin, cout, hout, wout, groups=1):
    """Multiply-accumulate count of one convolution node."""
    return kh * kw * cin * cout * hout * wout // groups
