"""Network assembly, forward passes and budget accounting.

The graph is a flat topologically ordered list of primitive nodes
(convolutions, elementwise ops, norms). Composite structures --
bottleneck blocks, attention gates, the decoder stages -- are emitted as
groups of primitives so that calibration sees every activation edge and
the quantization pass stays node-local.

Partitioning: every node is tagged "backbone" or "head". The backbone
ends at the last pointwise block of the tail; in the mixed scheme it
runs fully in int8 and its output edge is dequantized exactly once
before the float head.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ops, quant
from .config import MqnConfig
from .tensor import ConvSpec, ShapeError, out_size

# MobileNetV2 bottleneck table: (expansion, channels, repeats, first stride)
_MBV2_TABLE = ((1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2),
               (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1))
_MBV2_LAYERS = sum(row[2] for row in _MBV2_TABLE)


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    inputs: tuple
    partition: str = "backbone"
    attrs: dict = field(default_factory=dict)


@dataclass
class GraphQuant:
    scheme: quant.QuantScheme
    act_params: dict
    weight_params: dict
    static_head: bool = False
    luts: dict = field(default_factory=dict)


@dataclass
class ModelGraph:
    nodes: list
    weights: dict
    config: MqnConfig
    quant: GraphQuant | None = None
    calib: "quant.CalibrationRecord | None" = None

    def __post_init__(self):
        seen = {"input"}
        for node in self.nodes:
            for e in node.inputs:
                if e not in seen:
                    raise ValueError(f"node {node.name} consumes undefined edge {e!r}")
            if node.name in seen:
                raise ValueError(f"duplicate node name {node.name!r}")
            seen.add(node.name)

    @property
    def output_edge(self) -> str:
        return self.nodes[-1].name

    @property
    def boundary_edge(self) -> str:
        for node in reversed(self.nodes):
            if node.partition == "backbone":
                return node.name
        raise ValueError("graph has no backbone partition")

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)


def make_divisible(v, divisor=8):
    """Width rounding used by the scaled encoder: nearest multiple of 8,
    floor 8, never dropping below 90% of the unrounded width."""
    n = max(divisor, int(v + divisor / 2) // divisor * divisor)
    if n < 0.9 * v:
        n += divisor
    return n


# ---------------------------------------------------------------------------
# construction

class _Builder:
    def __init__(self, act):
        self.nodes = []
        self.weights = {}
        self.act = act

    def conv(self, name, src, cin, cout, k, stride=1, act=None, partition="backbone"):
        self.weights[name + ".w"] = np.zeros((k, k, cin, cout), np.float32)
        self.weights[name + ".b"] = np.zeros(cout, np.float32)
        self.nodes.append(Node(name, "conv", (src,), partition,
                               {"w": name + ".w", "b": name + ".b",
                                "spec": ConvSpec(k, k, stride, "same"), "act": act}))
        return name

    def dwconv(self, name, src, c, k=3, stride=1, act=None):
        self.weights[name + ".w"] = np.zeros((k, k, c, 1), np.float32)
        self.weights[name + ".b"] = np.zeros(c, np.float32)
        self.nodes.append(Node(name, "dwconv", (src,), "backbone",
                               {"w": name + ".w", "b": name + ".b",
                                "spec": ConvSpec(k, k, stride, "same"), "act": act}))
        return name

    def simple(self, name, kind, srcs, partition="backbone", **attrs):
        self.nodes.append(Node(name, kind, tuple(srcs), partition, attrs))
        return name

    def irlb(self, name, src, cin, cout, t, stride):
        """expand(1x1) -> depthwise(3x3) -> linear project, residual when
        the shapes allow; returns the block output edge."""
        hid = cin * t
        e = src
        if t != 1:
            e = self.conv(name + "_expand", src, cin, hid, 1, act=self.act)
        d = self.dwconv(name + "_dw", e, hid, 3, stride, act=self.act)
        p = self.conv(name + "_proj", d, hid, cout, 1, act=None)
        if stride == 1 and cin == cout:
            return self.simple(name + "_add", "add", (src, p))
        return p

    def attention(self, name, src, c, cfg: MqnConfig):
        kind = cfg.attention
        if kind == "none":
            return src
        if kind in ("sa", "csa"):
            g = self.conv(name + "_gate", src, c, 1, 1, act=None)
            gs = self.simple(name + "_sig", "sigmoid", (g,))
            m = self.simple(name + "_mul", "mul", (gs, src))
            if kind == "sa":
                return m
            d = self.dwconv(name + "_dw", src, c, 3, 1, act=None)
            ds = self.simple(name + "_dwsig", "sigmoid", (d,))
            return self.simple(name + "_mul2", "mul", (ds, m))
        hidden = c * cfg.ca_reduction if cfg.ca_expand else max(1, c // cfg.ca_reduction)
        gp = self.simple(name + "_gap", "gap", (src,))
        f1 = self.conv(name + "_fc1", gp, c, hidden, 1, act="relu")
        f2 = self.conv(name + "_fc2", f1, hidden, c, 1, act=None)
        s = self.simple(name + "_sig", "sigmoid", (f2,))
        return self.simple(name + "_mul", "mul", (s, src))


def build_mqn(cfg: MqnConfig) -> ModelGraph:
    """Assemble the network: scaled encoder with taps, four upsampling
    decoder stages with attention, pointwise tail, residual head."""
    if cfg.input_size % 32:
        raise ValueError("input size must be a multiple of 32 "
                         "(five stride-2 reductions)")
    if cfg.bottleneck_layer > _MBV2_LAYERS:
        raise ValueError(f"encoder has {_MBV2_LAYERS} bottleneck layers")
    if cfg.encoder_taps[-1] >= cfg.bottleneck_layer:
        raise ValueError("taps must precede the bottleneck layer")

    b = _Builder(cfg.irlb_activation)
    c = make_divisible(32 * cfg.alpha)
    edge = b.conv("stem", "input", 3, c, 3, stride=2, act=cfg.irlb_activation)

    taps = {}
    factors = {}
    factor = 2  # stem stride
    layer = 0
    for t, ch, n, s in _MBV2_TABLE:
        cout = make_divisible(ch * cfg.alpha)
        for i in range(n):
            layer += 1
            if layer > cfg.bottleneck_layer:
                break
            stride = s if i == 0 else 1
            factor *= stride
            factors[layer] = factor
            name = f"enc{layer}"
            if layer == cfg.bottleneck_layer:
                # the decoder taps the projection output (the folded-norm
                # edge); a residual add here would be dead weight
                hid = c * t
                e = b.conv(name + "_expand", edge, c, hid, 1, act=cfg.irlb_activation) if t != 1 else edge
                d = b.dwconv(name + "_dw", e, hid, 3, stride, act=cfg.irlb_activation)
                edge = b.conv(name + "_proj", d, hid, cout, 1, act=None)
            else:
                edge = b.irlb(name, edge, c, cout, t, stride)
            c = cout
            if layer in cfg.encoder_taps:
                taps[layer] = (edge, c)
        if layer > cfg.bottleneck_layer:
            break

    # each decoder stage doubles resolution and concatenates one tap, so
    # the taps must sit at successive halvings ending one above the bottom
    want = [factors[cfg.bottleneck_layer] // 2 ** i
            for i in range(len(cfg.encoder_taps), 0, -1)]
    have = [factors[t] for t in cfg.encoder_taps]
    if have != want or want[0] != 2:
        raise ValueError(f"taps {cfg.encoder_taps} sit at downsample factors {have}; "
                         f"the decoder needs {want} with the first at 2")

    for i, tap_layer in enumerate(reversed(cfg.encoder_taps), start=1):
        tap_edge, tap_c = taps[tap_layer]
        up = b.simple(f"dec{i}_up", "upsample", (edge,), factor=2)
        edge = b.simple(f"dec{i}_cat", "concat", (up, tap_edge))
        c = c + tap_c
        w = cfg.decoder_widths[i - 1]
        for j in range(1, cfg.decoder_irlbs[i - 1] + 1):
            edge = b.irlb(f"dec{i}_b{j}", edge, c, w, cfg.expansion, 1)
            c = w
        edge = b.attention(f"dec{i}_att", edge, c, cfg)

    edge = b.conv("cbr1", edge, c, cfg.head_channels, 1, act="relu")
    edge = b.simple("up_full", "upsample", (edge,), factor=2)
    edge = b.conv("cbr2", edge, cfg.head_channels, cfg.head_channels, 1, act="relu")
    edge = b.conv("cbr3", edge, cfg.head_channels, cfg.head_channels, 1, act="relu")

    edge = b.conv("head_conv", edge, cfg.head_channels, 3, 3, act=None, partition="head")
    b.weights["head_norm.gamma"] = np.ones(3, np.float32)
    b.weights["head_norm.beta"] = np.zeros(3, np.float32)
    edge = b.simple("head_norm", "instance_norm", (edge,), partition="head",
                    gamma="head_norm.gamma", beta="head_norm.beta", eps=1e-5)
    if cfg.head_relu:
        edge = b.simple("head_relu", "relu", (edge,), partition="head")
    edge = b.simple("head_tanh", "tanh", (edge,), partition="head")
    edge = b.simple("head_add", "add", ("input", edge), partition="head")
    b.simple("head_sigmoid", "sigmoid", (edge,), partition="head")
    return ModelGraph(b.nodes, b.weights, cfg)


def init_weights(graph: ModelGraph, seed: int) -> ModelGraph:
    """Seeded He-style initialization; bit-reproducible for a given seed."""
    rng = np.random.default_rng(seed)
    weights = dict(graph.weights)
    for node in graph.nodes:
        if node.kind in ("conv", "dwconv"):
            w = weights[node.attrs["w"]]
            kh, kw, ci, _ = w.shape
            fan_in = kh * kw * (1 if node.kind == "dwconv" else ci)
            weights[node.attrs["w"]] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                                  w.shape).astype(np.float32)
    return ModelGraph(list(graph.nodes), weights, graph.config,
                      quant=graph.quant, calib=graph.calib)


def image_to_batch(img) -> np.ndarray:
    """8-bit HxWx3 image (or float image in [0,1]) to a 1xHxWx3 f32 batch."""
    a = np.asarray(img)
    if a.ndim == 3:
        a = a[None]
    if a.dtype == np.uint8:
        a = a.astype(np.float32) / np.float32(255.0)
    return np.ascontiguousarray(a, np.float32)


# ---------------------------------------------------------------------------
# float execution

def _exec_float(node: Node, inputs, weights, wparams):
    k = node.kind
    if k in ("conv", "dwconv"):
        w = weights[node.attrs["w"]]
        bias = weights[node.attrs["b"]]
        spec = node.attrs["spec"]
        dw = k == "dwconv"
        if wparams and node.attrs["w"] in wparams:
            y = quant.dynamic_conv2d(inputs[0], w, wparams[node.attrs["w"]],
                                     bias, spec, depthwise=dw)
        elif dw:
            y = ops.depthwise_conv2d(inputs[0], w, bias, spec)
        else:
            y = ops.conv2d(inputs[0], w, bias, spec)
        act = node.attrs.get("act")
        return ops.activation(y, act) if act else y
    if k == "upsample":
        return ops.upsample_nearest(inputs[0], node.attrs["factor"])
    if k == "concat":
        return ops.concat_channels(inputs[0], inputs[1])
    if k == "add":
        return inputs[0] + inputs[1]
    if k == "mul":
        return inputs[0] * inputs[1]
    if k == "gap":
        return ops.global_avg_pool(inputs[0])
    if k == "instance_norm":
        return ops.instance_norm(inputs[0], weights[node.attrs["gamma"]],
                                 weights[node.attrs["beta"]], node.attrs.get("eps", 1e-5))
    if k in ("relu", "relu6", "sigmoid", "tanh"):
        return ops.activation(inputs[0], k)
    raise ValueError(f"unknown node kind {k!r}")


def forward_float_trace(graph: ModelGraph, x: np.ndarray) -> dict:
    if graph.quant is not None and graph.quant.scheme not in (
            quant.QuantScheme.FLOAT32, quant.QuantScheme.DYNAMIC_RANGE):
        raise ValueError("graph is statically quantized; use forward_mixed")
    _check_input(x)
    wparams = graph.quant.weight_params if graph.quant else None
    env = {"input": x}
    for node in graph.nodes:
        env[node.name] = _exec_float(node, [env[e] for e in node.inputs],
                                     graph.weights, wparams)
    return env


def forward_float(graph: ModelGraph, x: np.ndarray) -> np.ndarray:
    return forward_float_trace(graph, x)[graph.output_edge]


def _check_input(x):
    if x.ndim != 4 or x.shape[3] != 3:
        raise ShapeError("input must be Nx H x W x 3")
    if x.shape[1] % 32 or x.shape[2] % 32 or x.shape[1] == 0 or x.shape[2] == 0:
        raise ShapeError("input H and W must be non-zero multiples of 32")
    if x.dtype != np.float32:
        raise ShapeError("input must be float32 in [0,1]")
    if float(x.min()) < 0.0 or float(x.max()) > 1.0:
        raise ValueError("input values must lie in [0,1]")


# ---------------------------------------------------------------------------
# quantized execution

def _lut_for(graph, node, in_p, out_p):
    lut = graph.quant.luts.get(node.name)
    if lut is None:
        func = {"sigmoid": _sigmoid64, "tanh": np.tanh}[node.kind]
        lut = quant.build_lut(func, in_p, out_p)
        graph.quant.luts[node.name] = lut
    return lut


def _sigmoid64(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _exec_int(graph, node, env):
    ap = graph.quant.act_params
    weights = graph.weights
    ins = [env[e] for e in node.inputs]
    in_p = [ap[e] for e in node.inputs]
    out_p = ap[node.name]
    k = node.kind
    if k in ("conv", "dwconv"):
        return quant.quantized_conv2d(ins[0], in_p[0], weights[node.attrs["w"]],
                                      graph.quant.weight_params[node.attrs["w"]],
                                      weights[node.attrs["b"]], node.attrs["spec"],
                                      out_p, depthwise=k == "dwconv",
                                      act=node.attrs.get("act"))
    if k == "upsample":
        return ops.upsample_nearest(ins[0], node.attrs["factor"])
    if k == "concat":
        a = quant.requantize_elem(ins[0], in_p[0], out_p)
        bb = quant.requantize_elem(ins[1], in_p[1], out_p)
        return np.concatenate([a, bb], axis=3)
    if k == "add":
        return quant.int_add(ins[0], in_p[0], ins[1], in_p[1], out_p)
    if k == "mul":
        return quant.int_mul(ins[0], in_p[0], ins[1], in_p[1], out_p)
    if k == "gap":
        return quant.int_gap(ins[0], in_p[0], out_p)
    if k == "relu":
        return quant.int_relu(ins[0], in_p[0], out_p)
    if k in ("sigmoid", "tanh"):
        return quant.apply_lut(ins[0], _lut_for(graph, node, in_p[0], out_p), in_p[0])
    raise ValueError(f"node kind {k!r} has no integer executor")


def forward_quantized_trace(graph: ModelGraph, image) -> dict:
    """Run a statically quantized graph. Backbone edges hold integer
    codes; in the mixed scheme head edges hold float32 and the backbone
    output is dequantized exactly once, at the partition boundary."""
    gq = graph.quant
    if gq is None or gq.scheme not in (quant.QuantScheme.FULL_INT8,
                                       quant.QuantScheme.INT8W_INT16A):
        raise ValueError("graph is not statically quantized")
    x = image_to_batch(image)
    _check_input(x)
    in_p = gq.act_params["input"]
    env = {"input": quant.quantize_tensor(x, in_p)}
    env_f32 = {"input": x}
    for node in graph.nodes:
        if gq.static_head or node.partition == "backbone":
            env[node.name] = _exec_int(graph, node, env)
        else:
            ins = []
            for e in node.inputs:
                if e in env_f32:
                    ins.append(env_f32[e])
                else:  # crossing the partition boundary: dequantize once
                    val = quant.dequantize_tensor(env[e], gq.act_params[e])
                    env_f32[e] = val
                    ins.append(val)
            env_f32[node.name] = _exec_float(node, ins, graph.weights, gq.weight_params)
    trace = dict(env_f32)
    trace.update(env)  # static edges surface as integer codes
    if gq.static_head:
        trace[graph.output_edge] = quant.dequantize_tensor(
            env[graph.output_edge], gq.act_params[graph.output_edge])
    return trace


def forward_mixed(graph: ModelGraph, image) -> np.ndarray:
    """Mixed-scheme forward: int8 backbone, float/dynamic head."""
    return forward_quantized_trace(graph, image)[graph.output_edge]


def run_model(graph: ModelGraph, image) -> np.ndarray:
    """Scheme-appropriate forward for a loaded graph."""
    if graph.quant is None or graph.quant.scheme in (quant.QuantScheme.FLOAT32,
                                                     quant.QuantScheme.DYNAMIC_RANGE):
        return forward_float(graph, image_to_batch(image))
    return forward_mixed(graph, image)


# ---------------------------------------------------------------------------
# budgets

def _node_shapes(graph: ModelGraph, hw):
    """Propagate (H, W, C) along every edge for a given input size."""
    shapes = {"input": (hw[0], hw[1], 3)}
    for node in graph.nodes:
        h, w, c = shapes[node.inputs[0]]
        k = node.kind
        if k in ("conv", "dwconv"):
            spec = node.attrs["spec"]
            wt = graph.weights[node.attrs["w"]]
            h2 = out_size(h, spec.kernel_h, spec.stride, spec.padding)
            w2 = out_size(w, spec.kernel_w, spec.stride, spec.padding)
            shapes[node.name] = (h2, w2, c if k == "dwconv" else wt.shape[3])
        elif k == "upsample":
            f = node.attrs["factor"]
            shapes[node.name] = (h * f, w * f, c)
        elif k == "concat":
            _, _, c2 = shapes[node.inputs[1]]
            shapes[node.name] = (h, w, c + c2)
        elif k in ("add", "mul"):
            h2, w2, c2 = shapes[node.inputs[1]]
            shapes[node.name] = (max(h, h2), max(w, w2), max(c, c2))
        elif k == "gap":
            shapes[node.name] = (1, 1, c)
        else:
            shapes[node.name] = (h, w, c)
    return shapes


def node_budget(graph: ModelGraph, node: Node, shapes):
    params = sum(graph.weights[node.attrs[key]].size
                 for key in ("w", "b", "gamma", "beta") if key in node.attrs)
    macs = 0
    if node.kind in ("conv", "dwconv"):
        spec = node.attrs["spec"]
        wt = graph.weights[node.attrs["w"]]
        cin = wt.shape[2]
        cout = cin if node.kind == "dwconv" else wt.shape[3]
        ho, wo, _ = shapes[node.name]
        groups = cin if node.kind == "dwconv" else 1
        macs = ops.conv_macs(spec.kernel_h, spec.kernel_w, cin, cout, ho, wo, groups)
    return params, macs


def count_params_macs(graph: ModelGraph, input_hw=None):
    """Total parameters and multiply-accumulates (per-element ops free)."""
    if input_hw is None:
        input_hw = (graph.config.input_size, graph.config.input_size)
    shapes = _node_shapes(graph, input_hw)
    params = 0
    macs = 0
    for node in graph.nodes:
        p, m = node_budget(graph, node, shapes)
        params += p
        macs += m
    return params, macs
