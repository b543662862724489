"""Benchmark the numba kernels against the pure-numpy fallback.

Times the hot convolution paths at realistic layer shapes plus a full
model forward. Usage:

    python benchmarks/bench_kernels.py [--repeats N]

The same comparison can be driven through the environment: run any
workload with MQN_BACKEND=numpy to force the fallback.
"""

import argparse
import time
import warnings

warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB version")

import numpy as np

from mqn import backend, ops
from mqn.config import MqnConfig
from mqn.graph import build_mqn, forward_float, init_weights
from mqn.quant import (affine_params_from_range, quantize_bias, quantize_tensor,
                       quantize_weights_per_channel, quantized_conv2d)
from mqn.tensor import ConvSpec

CASES = [
    ("conv2d 1x1 176->96 @32x32", "conv", (1, 32, 32, 176), (1, 1, 176, 96), 1),
    ("conv2d 3x3 16->16 @128x128", "conv", (1, 128, 128, 16), (3, 3, 16, 16), 1),
    ("depthwise 3x3 96 @64x64", "dw", (1, 64, 64, 96), (3, 3, 96, 1), 1),
    ("qconv2d 1x1 176->96 @32x32", "qconv", (1, 32, 32, 176), (1, 1, 176, 96), 1),
    ("qconv2d 3x3 16->16 @128x128", "qconv", (1, 128, 128, 16), (3, 3, 16, 16), 1),
]


def _run_case(kind, x, w, b, stride, repeats):
    spec = ConvSpec(w.shape[0], w.shape[1], stride, "same")
    if kind == "conv":
        fn = lambda: ops.conv2d(x, w, b, spec)
    elif kind == "dw":
        fn = lambda: ops.depthwise_conv2d(x, w, b, spec)
    else:
        in_p = affine_params_from_range(float(x.min()), float(x.max()), np.int8)
        xq = quantize_tensor(x, in_p)
        wq, wp = quantize_weights_per_channel(w, axis=3)
        bias = quantize_bias(b, in_p.scale[0], wp.scale)
        out_p = affine_params_from_range(-4.0, 4.0, np.int8)
        fn = lambda: quantized_conv2d(xq, in_p, wq, wp, bias, spec, out_p)
    fn()  # warm up (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    results = {}
    for name in ("numba", "numpy"):
        backend.set_backend(name)
        rows = {}
        for label, kind, xshape, wshape, stride in CASES:
            x = rng.standard_normal(xshape).astype(np.float32)
            w = rng.standard_normal(wshape).astype(np.float32)
            cout = xshape[3] if kind == "dw" else wshape[3]
            b = np.zeros(cout, np.float32)
            rows[label] = _run_case(kind, x, w, b, stride, args.repeats)
        g = init_weights(build_mqn(MqnConfig()), 7)
        img = rng.random((1, 256, 256, 3)).astype(np.float32)
        forward_float(g, img)  # warm up
        t0 = time.perf_counter()
        forward_float(g, img)
        rows["full float forward @256x256"] = time.perf_counter() - t0
        results[name] = rows

    width = max(len(k) for k in results["numba"]) + 2
    print(f"{'case':<{width}}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for label in results["numba"]:
        a = results["numba"][label]
        b = results["numpy"][label]
        print(f"{label:<{width}}{a * 1e3:>10.2f}ms{b * 1e3:>10.2f}ms{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
