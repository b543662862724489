"""Affine quantization: parameters, calibration, integer kernels and the
whole-model conversion passes.

Conventions (standard post-training quantization):
  * weights: per-channel symmetric int8, zero_point 0
  * activations: per-tensor asymmetric, int8 or int16
  * int8 requantization: int32 accumulator scaled by a fixed-point
    multiplier with 31 fractional bits, round half away from zero --
    bit-reproducible across backends and platforms
  * int16 activations accumulate in int64; their accumulators are scaled
    in float64 (the acc*multiplier product can exceed 64 bits), which is
    equally deterministic
  * bounded activations (sigmoid, tanh) get fixed output params covering
    (0,1) / (-1,1) so an 8-bit output has exactly the 1/255 granularity
    its range implies; everything else uses calibrated min/max
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .tensor import DTYPE_RANGE, ConvSpec, conv_output_shape, pad_before


class QuantScheme(Enum):
    FLOAT32 = "float32"
    FULL_INT8 = "full_int8"          # static int8 backbone + dynamic head (the mixed scheme)
    DYNAMIC_RANGE = "dynamic_range"  # int8 weights everywhere, float activations
    INT8W_INT16A = "int8w_int16a"    # static: int8 weights, int16 activations, whole graph


@dataclass(frozen=True)
class QuantParams:
    """Affine map real = scale * (q - zero_point).

    scale/zero_point are scalars for per-tensor params or 1-D arrays of
    per-channel values along `axis`.
    """
    scale: np.ndarray
    zero_point: np.ndarray
    dtype: np.dtype
    axis: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "scale", np.atleast_1d(np.asarray(self.scale, np.float32)))
        object.__setattr__(self, "zero_point", np.atleast_1d(np.asarray(self.zero_point, np.int32)))
        object.__setattr__(self, "dtype", np.dtype(self.dtype))
        if self.dtype not in DTYPE_RANGE:
            raise ValueError(f"unsupported quantized dtype {self.dtype}")
        if not np.all(self.scale > 0):
            raise ValueError("scale must be positive")
        qmin, qmax = DTYPE_RANGE[self.dtype]
        if np.any(self.zero_point < qmin) or np.any(self.zero_point > qmax):
            raise ValueError("zero_point not representable in target dtype")
        if self.scale.shape != self.zero_point.shape:
            raise ValueError("scale and zero_point must have matching shapes")
        if self.axis is None and self.scale.size != 1:
            raise ValueError("per-tensor params must be scalar")

    @property
    def qmin(self):
        return DTYPE_RANGE[self.dtype][0]

    @property
    def qmax(self):
        return DTYPE_RANGE[self.dtype][1]

    def _shaped(self, ndim):
        if self.axis is None:
            return self.scale.reshape(()), self.zero_point.reshape(())
        shape = [1] * ndim
        shape[self.axis] = -1
        return self.scale.reshape(shape), self.zero_point.reshape(shape)


def round_half_away(x):
    """Round to nearest with ties away from zero; returns int64."""
    x = np.asarray(x)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5)).astype(np.int64)


def affine_params_from_range(rmin: float, rmax: float, dtype=np.int8,
                             symmetric: bool = False) -> QuantParams:
    if rmin > rmax:
        raise ValueError(f"min {rmin} > max {rmax}")
    rmin = min(float(rmin), 0.0)
    rmax = max(float(rmax), 0.0)
    qmin, qmax = DTYPE_RANGE[np.dtype(dtype)]
    if rmin == rmax == 0.0:
        return QuantParams(1.0, 0, dtype)
    if symmetric:
        return QuantParams(max(abs(rmin), abs(rmax)) / qmax, 0, dtype)
    scale = (rmax - rmin) / (qmax - qmin)
    zp = int(np.clip(round_half_away(qmin - rmin / scale), qmin, qmax))
    return QuantParams(scale, zp, dtype)


def quantize_weights_per_channel(w, axis: int, dtype=np.int8):
    """Symmetric per-channel weight quantization along `axis`."""
    moved = np.moveaxis(w, axis, -1).reshape(-1, w.shape[axis])
    amax = np.abs(moved).max(axis=0)
    qmax = DTYPE_RANGE[np.dtype(dtype)][1]
    scales = np.where(amax > 0, amax / qmax, 1.0).astype(np.float32)
    p = QuantParams(scales, np.zeros_like(scales, np.int32), dtype, axis=axis)
    return quantize_tensor(w, p), p


def quantize_tensor(x, p: QuantParams):
    scale, zp = p._shaped(np.asarray(x).ndim)
    q = round_half_away(np.asarray(x, np.float64) / scale) + zp
    return np.clip(q, p.qmin, p.qmax).astype(p.dtype)


def dequantize_tensor(q, p: QuantParams):
    if np.asarray(q).dtype != p.dtype:
        raise ValueError(f"tensor dtype {np.asarray(q).dtype} != params dtype {p.dtype}")
    scale, zp = p._shaped(np.asarray(q).ndim)
    return ((q.astype(np.int32) - zp) * scale).astype(np.float32)


def quantize_bias(b, in_scale, w_scales, dtype=np.int32):
    """Bias in accumulator units: scale s_in * s_w (per channel)."""
    q = round_half_away(np.asarray(b, np.float64) / (float(in_scale) * np.asarray(w_scales, np.float64)))
    lo, hi = DTYPE_RANGE[np.dtype(dtype)]
    return np.clip(q, lo, hi).astype(dtype)


def quantize_multiplier(m: float):
    """Represent m as m0 * 2**-shift with m0 an int32 holding 31
    fractional bits (m0 in [2**30, 2**31) for m > 0)."""
    if m <= 0:
        raise ValueError("multiplier must be positive")
    frac, exp = math.frexp(m)  # m = frac * 2**exp, frac in [0.5, 1)
    m0 = round(frac * (1 << 31))
    if m0 == 1 << 31:
        m0 >>= 1
        exp += 1
    shift = 31 - exp
    if not 1 <= shift <= 62:
        raise ValueError(f"multiplier {m} out of fixed-point range")
    return m0, shift


def _rhaz_shift(prod, shift):
    """round-half-away-from-zero of prod / 2**shift for int64 prod."""
    bias = np.int64(1) << np.int64(shift - 1)
    mag = (np.abs(prod) + bias) >> np.int64(shift)
    return np.where(prod < 0, -mag, mag)


def scale_accumulator(acc, multiplier, acc_dtype):
    """Apply the real-valued multiplier to an integer accumulator with
    round-half-away semantics. int32 accumulators use the fixed-point
    path; int64 (int16-activation) accumulators are scaled in float64.
    multiplier may be a scalar or a per-channel array broadcast on the
    last axis."""
    if np.dtype(acc_dtype) == np.int32:
        ms = np.atleast_1d(np.asarray(multiplier, np.float64))
        m0 = np.empty(ms.shape, np.int64)
        sh = np.empty(ms.shape, np.int64)
        for i, m in enumerate(ms.ravel()):
            m0.ravel()[i], sh.ravel()[i] = quantize_multiplier(float(m))
        prod = acc.astype(np.int64) * m0
        return _rhaz_shift(prod, sh)
    return round_half_away(acc.astype(np.float64) * np.asarray(multiplier, np.float64))


def _conv_acc(xq, in_p, wq, spec, depthwise, acc_dtype):
    x = (xq.astype(np.int64 if acc_dtype == np.int64 else np.int32)
         - int(in_p.zero_point[0]))
    w = wq.astype(x.dtype)
    cout = xq.shape[3] if depthwise else wq.shape[3]
    _, ho, wo, _ = conv_output_shape(
        xq.shape, (wq.shape[0], wq.shape[1], xq.shape[3], cout),
        ConvSpec(wq.shape[0], wq.shape[1], spec.stride, spec.padding,
                 xq.shape[3] if depthwise else 1))
    pt = pad_before(xq.shape[1], wq.shape[0], spec.stride, spec.padding)
    pl = pad_before(xq.shape[2], wq.shape[1], spec.stride, spec.padding)
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    if depthwise:
        return kernels.dwconv2d_int_acc(x, w, spec.stride, pt, pl, ho, wo)
    return kernels.conv2d_int_acc(x, w, spec.stride, pt, pl, ho, wo)


def quantized_conv2d(xq, in_p: QuantParams, wq, w_p: QuantParams, bias,
                     spec: ConvSpec, out_p: QuantParams, depthwise=False,
                     act: str | None = None):
    """Static integer convolution: int accumulate, fixed-point requantize.

    Fused relu/relu6 only move the lower clamp to the code of 0.0; the
    calibrated output range already caps relu6 at 6.
    """
    if np.any(w_p.zero_point != 0):
        raise ValueError("weight quantization must be symmetric (zero_point 0)")
    if in_p.axis is not None or out_p.axis is not None:
        raise ValueError("activation params are per-tensor")
    if xq.dtype != in_p.dtype:
        raise ValueError("input dtype does not match its params")
    acc_dtype = np.int64 if in_p.dtype == np.int16 else np.int32
    acc = _conv_acc(xq, in_p, wq, spec, depthwise, acc_dtype)
    acc += bias.astype(acc.dtype)
    mult = float(in_p.scale[0]) * w_p.scale.astype(np.float64) / float(out_p.scale[0])
    scaled = scale_accumulator(acc, mult, acc_dtype)
    lo = out_p.qmin
    if act in ("relu", "relu6"):
        lo = max(lo, int(out_p.zero_point[0]))
    return np.clip(scaled + int(out_p.zero_point[0]), lo, out_p.qmax).astype(out_p.dtype)


def dynamic_conv2d(x, wq, w_p: QuantParams, bias, spec: ConvSpec, depthwise=False):
    """Dynamic-range convolution: float input quantized on the fly
    (per-tensor asymmetric int8 from its own min/max), integer matmul,
    float32 rescale, float bias."""
    if np.any(w_p.zero_point != 0):
        raise ValueError("weight quantization must be symmetric (zero_point 0)")
    in_p = affine_params_from_range(float(x.min()), float(x.max()), np.int8)
    xq = quantize_tensor(x, in_p)
    acc = _conv_acc(xq, in_p, wq, spec, depthwise, np.int32)
    combined = (float(in_p.scale[0]) * w_p.scale.astype(np.float64)).astype(np.float32)
    return acc.astype(np.float32) * combined + np.asarray(bias, np.float32)


def conv_acc_bound(wq, bias, in_p: QuantParams, depthwise=False):
    """Worst-case |int32 accumulator| for a quantized conv; used to
    reject layers that could overflow before they ever run."""
    span = max(abs(in_p.qmin - int(in_p.zero_point[0])),
               abs(in_p.qmax - int(in_p.zero_point[0])))
    w64 = np.abs(wq.astype(np.int64))
    per_out = w64.sum(axis=(0, 1, 3) if depthwise else (0, 1, 2))
    return int((per_out * span + np.abs(bias.astype(np.int64))).max())


# ---------------------------------------------------------------------------
# integer elementwise / reduction ops used by the quantized graph executor

def requantize_elem(q, in_p: QuantParams, out_p: QuantParams, lo=None):
    if (in_p.dtype == out_p.dtype and in_p.scale[0] == out_p.scale[0]
            and in_p.zero_point[0] == out_p.zero_point[0] and lo is None):
        return q.copy()
    acc_dtype = np.int64 if in_p.dtype == np.int16 else np.int32
    diff = (q.astype(acc_dtype) - int(in_p.zero_point[0]))
    scaled = scale_accumulator(diff, float(in_p.scale[0]) / float(out_p.scale[0]), acc_dtype)
    low = out_p.qmin if lo is None else lo
    return np.clip(scaled + int(out_p.zero_point[0]), low, out_p.qmax).astype(out_p.dtype)


def int_add(qa, a_p: QuantParams, qb, b_p: QuantParams, out_p: QuantParams):
    acc_dtype = np.int64 if out_p.dtype == np.int16 else np.int32
    sa = scale_accumulator(qa.astype(acc_dtype) - int(a_p.zero_point[0]),
                           float(a_p.scale[0]) / float(out_p.scale[0]), acc_dtype)
    sb = scale_accumulator(qb.astype(acc_dtype) - int(b_p.zero_point[0]),
                           float(b_p.scale[0]) / float(out_p.scale[0]), acc_dtype)
    return np.clip(sa + sb + int(out_p.zero_point[0]), out_p.qmin, out_p.qmax).astype(out_p.dtype)


def int_mul(qa, a_p: QuantParams, qb, b_p: QuantParams, out_p: QuantParams):
    acc_dtype = np.int64 if out_p.dtype == np.int16 else np.int32
    prod = ((qa.astype(acc_dtype) - int(a_p.zero_point[0]))
            * (qb.astype(acc_dtype) - int(b_p.zero_point[0])))
    m = float(a_p.scale[0]) * float(b_p.scale[0]) / float(out_p.scale[0])
    scaled = scale_accumulator(prod, m, acc_dtype)
    return np.clip(scaled + int(out_p.zero_point[0]), out_p.qmin, out_p.qmax).astype(out_p.dtype)


def int_gap(q, in_p: QuantParams, out_p: QuantParams):
    n, h, w, c = q.shape
    acc = (q.astype(np.int64) - int(in_p.zero_point[0])).sum(axis=(1, 2), keepdims=True)
    m = float(in_p.scale[0]) / (h * w * float(out_p.scale[0]))
    scaled = scale_accumulator(acc, m, np.int64)
    return np.clip(scaled + int(out_p.zero_point[0]), out_p.qmin, out_p.qmax).astype(out_p.dtype)


def int_relu(q, in_p: QuantParams, out_p: QuantParams):
    clipped = np.maximum(q, np.asarray(in_p.zero_point[0], q.dtype))
    return requantize_elem(clipped, in_p, out_p, lo=int(out_p.zero_point[0]))


def build_lut(func, in_p: QuantParams, out_p: QuantParams):
    """Code-indexed lookup table for a scalar nonlinearity."""
    codes = np.arange(in_p.qmin, in_p.qmax + 1, dtype=np.int64)
    real = (codes - int(in_p.zero_point[0])) * float(in_p.scale[0])
    out = round_half_away(func(real) / float(out_p.scale[0])) + int(out_p.zero_point[0])
    return np.clip(out, out_p.qmin, out_p.qmax).astype(out_p.dtype)


def apply_lut(q, lut, in_p: QuantParams):
    return lut[q.astype(np.int64) - in_p.qmin]


def fixed_activation_params(kind: str, dtype) -> QuantParams:
    """Fixed output params for range-bounded activations: sigmoid maps
    [0,1] onto the full code range, tanh maps [-1,1] around 0."""
    qmin, qmax = DTYPE_RANGE[np.dtype(dtype)]
    qrange = qmax - qmin
    if kind == "sigmoid":
        return QuantParams(1.0 / qrange, qmin, dtype)
    if kind == "tanh":
        return QuantParams(2.0 / qrange, 0, dtype)
    raise ValueError(kind)


def input_params(dtype) -> QuantParams:
    """Fixed input-image params: scale 1/255, zero_point qmin, so 8-bit
    display values are represented exactly."""
    return QuantParams(1.0 / 255.0, DTYPE_RANGE[np.dtype(dtype)][0], dtype)


# ---------------------------------------------------------------------------
# calibration

@dataclass
class CalibrationRecord:
    """Observed activation ranges per graph edge."""
    ranges: dict = field(default_factory=dict)

    def observe(self, edge: str, arr):
        lo = float(np.min(arr))
        hi = float(np.max(arr))
        if edge in self.ranges:
            plo, phi = self.ranges[edge]
            lo, hi = min(lo, plo), max(hi, phi)
        self.ranges[edge] = (lo, hi)

    def merge(self, other: "CalibrationRecord"):
        for edge, (lo, hi) in other.ranges.items():
            if edge in self.ranges:
                plo, phi = self.ranges[edge]
                self.ranges[edge] = (min(lo, plo), max(hi, phi))
            else:
                self.ranges[edge] = (lo, hi)
        return self

    def __contains__(self, edge):
        return edge in self.ranges


def calibrate_activations(graph, images) -> CalibrationRecord:
    """Run the float graph over 8-bit calibration images, recording
    min/max for every edge (input included)."""
    from .graph import forward_float_trace, image_to_batch
    if len(images) == 0:
        raise ValueError("empty calibration set")
    record = CalibrationRecord()
    for img in images:
        env = forward_float_trace(graph, image_to_batch(img))
        for edge, value in env.items():
            record.observe(edge, value)
    return record


# ---------------------------------------------------------------------------
# whole-model conversion

def quantize_model(graph, scheme: QuantScheme, calib: CalibrationRecord | None = None,
                   static_head: bool = False):
    """Return a new graph converted to the requested scheme.

    FULL_INT8 statically quantizes the backbone partition and gives the
    head dynamic-range weights (set static_head=True to force the head
    static as well, for granularity experiments). INT8W_INT16A statically
    quantizes the whole graph with int16 activations and replaces the
    head's instance norm with a folded per-channel affine.
    DYNAMIC_RANGE converts every conv weight to int8 and keeps float
    activations. FLOAT32 is the identity.
    """
    from .graph import GraphQuant, ModelGraph

    if scheme == QuantScheme.FLOAT32:
        return ModelGraph(list(graph.nodes), dict(graph.weights), graph.config,
                          quant=None, calib=graph.calib)

    weights = dict(graph.weights)
    nodes = list(graph.nodes)

    if scheme == QuantScheme.DYNAMIC_RANGE:
        wparams = {}
        for node in nodes:
            if node.kind in ("conv", "dwconv"):
                axis = 2 if node.kind == "dwconv" else 3
                wq, wp = quantize_weights_per_channel(weights[node.attrs["w"]], axis)
                weights[node.attrs["w"]] = wq
                wparams[node.attrs["w"]] = wp
        q = GraphQuant(scheme, act_params={}, weight_params=wparams, static_head=False)
        return ModelGraph(nodes, weights, graph.config, quant=q, calib=graph.calib)

    if calib is None:
        raise ValueError(f"{scheme.value} conversion requires a calibration record")

    act_dtype = np.int16 if scheme == QuantScheme.INT8W_INT16A else np.int8
    whole_graph = scheme == QuantScheme.INT8W_INT16A or static_head

    if whole_graph:
        # a data-dependent norm cannot be statically quantized; swap in
        # the folded per-channel affine of its batch-norm substitute
        nodes = [_fold_instance_norm(n, weights) if n.kind == "instance_norm" else n
                 for n in nodes]

    def is_static(node):
        return whole_graph or node.partition == "backbone"

    # activation params per edge
    act_params = {"input": input_params(act_dtype)}
    for node in nodes:
        if not is_static(node):
            continue
        if node.name not in calib:
            raise ValueError(f"missing calibration for edge {node.name!r}")
        if node.kind in ("sigmoid", "tanh"):
            act_params[node.name] = fixed_activation_params(node.kind, act_dtype)
        elif node.kind == "upsample":
            # replication preserves values, so the edge params carry over
            act_params[node.name] = act_params[node.inputs[0]]
        else:
            act_params[node.name] = _calibrated(calib, node.name, act_dtype)

    wparams = {}
    for node in nodes:
        if node.kind not in ("conv", "dwconv"):
            continue
        axis = 2 if node.kind == "dwconv" else 3
        wq, wp = quantize_weights_per_channel(weights[node.attrs["w"]], axis)
        if is_static(node):
            in_p = act_params[node.inputs[0]]
            bq = quantize_bias(weights[node.attrs["b"]], in_p.scale[0], wp.scale)
            bound = conv_acc_bound(wq, bq, in_p, depthwise=node.kind == "dwconv")
            if in_p.dtype == np.int8 and bound >= 1 << 31:
                raise OverflowError(f"node {node.name}: int32 accumulator bound {bound} overflows")
            weights[node.attrs["b"]] = bq
        weights[node.attrs["w"]] = wq
        wparams[node.attrs["w"]] = wp

    q = GraphQuant(scheme, act_params=act_params, weight_params=wparams,
                   static_head=whole_graph)
    return ModelGraph(nodes, weights, graph.config, quant=q, calib=graph.calib)


def _calibrated(calib, edge, dtype):
    lo, hi = calib.ranges[edge]
    return affine_params_from_range(lo, hi, dtype)


def _fold_instance_norm(node, weights):
    """Replace instance norm by the per-channel affine its batch-norm
    substitute folds to (identity running stats)."""
    from .graph import Node
    gamma = weights[node.attrs["gamma"]]
    beta = weights[node.attrs["beta"]]
    eps = node.attrs.get("eps", 1e-5)
    c = gamma.shape[0]
    scale = (gamma.astype(np.float64) / np.sqrt(1.0 + eps)).astype(np.float32)
    weights[node.attrs["gamma"] + ".folded_w"] = scale.reshape(1, 1, c, 1)
    weights[node.attrs["beta"] + ".folded_b"] = beta.astype(np.float32)
    attrs = {"w": node.attrs["gamma"] + ".folded_w",
             "b": node.attrs["beta"] + ".folded_b",
             "spec": ConvSpec(1, 1, 1, "same"), "act": None}
    return Node(node.name, "dwconv", node.inputs, node.partition, attrs)
