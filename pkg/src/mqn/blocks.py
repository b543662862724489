"""Composite network blocks: inverted residual bottleneck, pointwise
conv-bn-relu, and the three gated attention variants.

Each block is a pure composition of the float layer ops; weights arrive
as a flat name->array dict (see the *_weights helpers for the expected
keys and shapes).
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ConvSpec, ShapeError


@dataclass(frozen=True)
class BlockConfig:
    expansion: int
    stride: int
    out_channels: int
    attention: str = "none"
    ca_reduction: int = 8
    activation: str = "relu6"

    def __post_init__(self):
        if self.expansion < 1 or self.out_channels < 1 or self.ca_reduction < 1:
            raise ValueError("expansion, out_channels and ca_reduction must be positive")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")


def irlb(x, cfg: BlockConfig, weights):
    """expand(1x1) + act, depthwise(3x3, stride) + act, linear project;
    residual shortcut when stride is 1 and channels are preserved."""
    cin = x.shape[3]
    hid = cin * cfg.expansion
    y = x
    if cfg.expansion != 1:
        y = ops.activation(ops.conv2d(y, weights["expand_w"], weights["expand_b"],
                                      ConvSpec(1, 1, 1, "same")), cfg.activation)
    y = ops.activation(ops.depthwise_conv2d(y, weights["dw_w"], weights["dw_b"],
                                            ConvSpec(3, 3, cfg.stride, "same")),
                       cfg.activation)
    if weights["proj_w"].shape[2] != hid:
        raise ShapeError("projection weights disagree with the expansion width")
    y = ops.conv2d(y, weights["proj_w"], weights["proj_b"], ConvSpec(1, 1, 1, "same"))
    if cfg.stride == 1 and cin == cfg.out_channels:
        y = y + x
    return y


def sa_block(x, weights):
    """Spatial gate: sigmoid of a 1x1 single-channel conv scales the input."""
    gate = ops.activation(ops.conv2d(x, weights["gate_w"], weights["gate_b"],
                                     ConvSpec(1, 1, 1, "same")), "sigmoid")
    return gate * x


def csa_block(x, weights):
    """Spatial gate followed by a depthwise channel gate, both from the
    block input."""
    spatial = sa_block(x, weights)
    ch_gate = ops.activation(ops.depthwise_conv2d(x, weights["dw_w"], weights["dw_b"],
                                                  ConvSpec(3, 3, 1, "same")), "sigmoid")
    return ch_gate * spatial


def ca_block(x, weights):
    """Channel gate: pooled descriptor through a two-layer bottleneck,
    sigmoid gate broadcast over space."""
    g = ops.global_avg_pool(x)
    g = ops.activation(ops.conv2d(g, weights["fc1_w"], weights["fc1_b"],
                                  ConvSpec(1, 1, 1, "same")), "relu")
    g = ops.conv2d(g, weights["fc2_w"], weights["fc2_b"], ConvSpec(1, 1, 1, "same"))
    return ops.activation(g, "sigmoid") * x


def conv_bn_relu(x, weights):
    """Pointwise conv (norm already folded into the weights) + ReLU."""
    return ops.activation(ops.conv2d(x, weights["w"], weights["b"],
                                     ConvSpec(1, 1, 1, "same")), "relu")


# --- weight allocation helpers (zero-filled, caller seeds as needed) ---

def irlb_weights(cin, cfg: BlockConfig):
    hid = cin * cfg.expansion
    w = {}
    if cfg.expansion != 1:
        w["expand_w"] = np.zeros((1, 1, cin, hid), np.float32)
        w["expand_b"] = np.zeros(hid, np.float32)
    w["dw_w"] = np.zeros((3, 3, hid, 1), np.float32)
    w["dw_b"] = np.zeros(hid, np.float32)
    w["proj_w"] = np.zeros((1, 1, hid, cfg.out_channels), np.float32)
    w["proj_b"] = np.zeros(cfg.out_channels, np.float32)
    return w


def sa_weights(cin):
    return {"gate_w": np.zeros((1, 1, cin, 1), np.float32),
            "gate_b": np.zeros(1, np.float32)}


def csa_weights(cin):
    w = sa_weights(cin)
    w["dw_w"] = np.zeros((3, 3, cin, 1), np.float32)
    w["dw_b"] = np.zeros(cin, np.float32)
    return w


def ca_weights(cin, reduction=8, expand=False):
    hidden = cin * reduction if expand else max(1, cin // reduction)
    return {"fc1_w": np.zeros((1, 1, cin, hidden), np.float32),
            "fc1_b": np.zeros(hidden, np.float32),
            "fc2_w": np.zeros((1, 1, hidden, cin), np.float32),
            "fc2_b": np.zeros(cin, np.float32)}


def irlb_macs(cin, cfg: BlockConfig, hw):
    """Closed-form multiply-accumulate count of one block at spatial size
    hw (input resolution; depthwise and projection run at the strided
    output resolution)."""
    h, w = hw
    ho, wo = -(-h // cfg.stride), -(-w // cfg.stride)
    hid = cin * cfg.expansion
    macs = 0
    if cfg.expansion != 1:
        macs += ops.conv_macs(1, 1, cin, hid, h, w)
    macs += ops.conv_macs(3, 3, hid, hid, ho, wo, groups=hid)
    macs += ops.conv_macs(1, 1, hid, cfg.out_channels, ho, wo)
    return macs


def separable_vs_full_mac_ratio(n_out, kernel, channels, hw):
    """Measured MAC ratio of depthwise(k x k) + pointwise(->n_out) against
    one full k x k convolution to n_out channels, as an exact fraction."""
    from fractions import Fraction
    h, w = hw
    sep = (ops.conv_macs(kernel, kernel, channels, channels, h, w, groups=channels)
           + ops.conv_macs(1, 1, channels, n_out, h, w))
    full = ops.conv_macs(kernel, kernel, channels, n_out, h, w)
    return Fraction(sep, full)
