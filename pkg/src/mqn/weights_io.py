"""MQNW weights container.

Layout (all integers little-endian):

    magic "MQNW" | u32 version=1 | u32 tensor count
    per tensor:
        u16 name length | name (UTF-8)
        u8 dtype (0=f32, 1=i8, 2=i16, 3=i32)
        u8 ndim | ndim x u32 dims
        u8 quant flag; if 1: i8 axis (-1 = per-tensor), u32 count,
            count x f32 scales, count x i32 zero_points
        raw row-major data

Besides the weight arrays, the container carries bookkeeping tensors:
"meta:scheme" (i32 [scheme code, static-head flag]), "actq:<edge>"
(activation quant params in the quant block of a placeholder element)
and "calib:<edge>" (f32 [min, max] observed ranges). Tensors are written
in sorted name order, so serialization is byte-deterministic.
"""

import struct

import numpy as np

from .config import MqnConfig
from .quant import CalibrationRecord, QuantParams, QuantScheme

MAGIC = b"MQNW"
VERSION = 1

_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.int8): 1,
               np.dtype(np.int16): 2, np.dtype(np.int32): 3}
_CODE_DTYPE = {v: np.dtype(k) for k, v in _DTYPE_CODE.items()}
_NP_LE = {0: "<f4", 1: "<i1", 2: "<i2", 3: "<i4"}

_SCHEME_CODE = {QuantScheme.FLOAT32: 0, QuantScheme.FULL_INT8: 1,
                QuantScheme.DYNAMIC_RANGE: 2, QuantScheme.INT8W_INT16A: 3}
_CODE_SCHEME = {v: k for k, v in _SCHEME_CODE.items()}


class WeightsFormatError(ValueError):
    """Malformed or truncated MQNW data."""


def _write_tensor(out, name, arr, qp: QuantParams | None):
    nb = name.encode("utf-8")
    out.append(struct.pack("<H", len(nb)))
    out.append(nb)
    code = _DTYPE_CODE.get(arr.dtype)
    if code is None:
        raise WeightsFormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
    out.append(struct.pack("<BB", code, arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    if qp is None:
        out.append(b"\x00")
    else:
        axis = -1 if qp.axis is None else qp.axis
        out.append(struct.pack("<Bb I", 1, axis, qp.scale.size))
        out.append(qp.scale.astype("<f4").tobytes())
        out.append(qp.zero_point.astype("<i4").tobytes())
    out.append(np.ascontiguousarray(arr).astype(_NP_LE[code]).tobytes())


def save_weights(graph) -> bytes:
    """Serialize weights, quantization state and calibration ranges."""
    entries = {}
    for name, arr in graph.weights.items():
        qp = graph.quant.weight_params.get(name) if graph.quant else None
        entries[name] = (np.asarray(arr), qp)
    if graph.quant is not None:
        scheme = graph.quant.scheme
        entries["meta:scheme"] = (np.array([_SCHEME_CODE[scheme],
                                            int(graph.quant.static_head)], np.int32), None)
        for edge, p in graph.quant.act_params.items():
            entries[f"actq:{edge}"] = (np.zeros(1, p.dtype), p)
    if graph.calib is not None:
        for edge, (lo, hi) in graph.calib.ranges.items():
            entries[f"calib:{edge}"] = (np.array([lo, hi], np.float32), None)
    out = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name in sorted(entries):
        arr, qp = entries[name]
        _write_tensor(out, name, arr, qp)
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.context = "header"

    def take(self, n):
        if self.pos + n > len(self.data):
            raise WeightsFormatError(
                f"truncated at byte {self.pos} while reading {self.context}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(data: bytes):
    """Parse raw MQNW bytes into (tensors, quant_params) name maps."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise WeightsFormatError("bad magic; not an MQNW file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise WeightsFormatError(f"unsupported version {version}")
    tensors = {}
    qparams = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        r.context = f"tensor {name!r}"
        code, ndim = r.unpack("<BB")
        if code not in _CODE_DTYPE:
            raise WeightsFormatError(f"tensor {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}I")
        (qflag,) = r.unpack("<B")
        if qflag == 1:
            axis, qcount = r.unpack("<b I")
            scales = np.frombuffer(r.take(4 * qcount), "<f4").copy()
            zps = np.frombuffer(r.take(4 * qcount), "<i4").copy()
            qparams[name] = QuantParams(scales, zps, _CODE_DTYPE[code],
                                        axis=None if axis < 0 else axis)
        elif qflag != 0:
            raise WeightsFormatError(f"tensor {name!r}: bad quant flag {qflag}")
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = r.take(n * np.dtype(_NP_LE[code]).itemsize)
        tensors[name] = np.frombuffer(raw, _NP_LE[code]).reshape(dims).astype(_CODE_DTYPE[code])
    if r.pos != len(data):
        raise WeightsFormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return tensors, qparams


def load_weights(data: bytes, cfg: MqnConfig):
    """Rebuild a model from MQNW bytes and its configuration."""
    from .graph import GraphQuant, ModelGraph, build_mqn
    from .quant import _fold_instance_norm

    tensors, qparams = read_container(data)
    base = build_mqn(cfg)

    scheme = None
    static_head = False
    if "meta:scheme" in tensors:
        code, sh = (int(v) for v in tensors.pop("meta:scheme")[:2])
        if code not in _CODE_SCHEME:
            raise WeightsFormatError(f"unknown scheme code {code}")
        scheme = _CODE_SCHEME[code]
        static_head = bool(sh)

    calib = CalibrationRecord()
    act_params = {}
    weights = {}
    for name, arr in tensors.items():
        if name.startswith("calib:"):
            calib.ranges[name[6:]] = (float(arr[0]), float(arr[1]))
        elif name.startswith("actq:"):
            act_params[name[5:]] = qparams[name]
        else:
            weights[name] = arr

    nodes = list(base.nodes)
    if scheme in (QuantScheme.FULL_INT8, QuantScheme.INT8W_INT16A) and (
            static_head or scheme == QuantScheme.INT8W_INT16A):
        folded = dict(weights)
        nodes = [_fold_instance_norm(n, folded) if n.kind == "instance_norm" else n
                 for n in nodes]
        # the folded arrays themselves come from the container

    expected = set(base.weights)
    if scheme in (QuantScheme.FULL_INT8, QuantScheme.INT8W_INT16A) and (
            static_head or scheme == QuantScheme.INT8W_INT16A):
        for node in base.nodes:
            if node.kind == "instance_norm":
                expected.add(node.attrs["gamma"] + ".folded_w")
                expected.add(node.attrs["beta"] + ".folded_b")
    missing = expected - set(weights)
    if missing:
        raise WeightsFormatError(f"missing tensors: {sorted(missing)[:4]}")
    unknown = set(weights) - expected
    if unknown:
        raise WeightsFormatError(f"unexpected tensors: {sorted(unknown)[:4]}")
    for node in nodes:
        for key in ("w", "b", "gamma", "beta"):
            wname = node.attrs.get(key)
            if wname is not None and tuple(weights[wname].shape) != tuple(base.weights.get(wname, weights[wname]).shape):
                raise WeightsFormatError(
                    f"tensor {wname!r}: shape {weights[wname].shape} does not match the configuration")

    gq = None
    if scheme is not None and scheme != QuantScheme.FLOAT32:
        wq = {n: p for n, p in qparams.items() if not n.startswith("actq:")}
        gq = GraphQuant(scheme, act_params=act_params, weight_params=wq,
                        static_head=static_head)
    return ModelGraph(nodes, weights, cfg, quant=gq,
                      calib=calib if calib.ranges else None)
