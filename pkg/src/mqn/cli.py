"""Command-line interface.

Subcommands: init-weights, calibrate, quantize, infer, tmo, eval,
inspect. Every run prints the resolved model configuration to stderr;
data outputs go to files (or stdout for eval CSV). Exit codes: 0 on
success, 1 on I/O or format errors (one-line diagnostic naming the
file), 2 on usage errors.
"""

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

# environment detail of the numba threading layer, not actionable here
warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB version")

from . import hdr, metrics, tmo
from .config import MqnConfig, config_to_text, load_config
from .graph import (ModelGraph, _node_shapes, build_mqn, init_weights,
                    node_budget, run_model)
from .losses import SeededFeatureExtractor, cosine_loss, fr_loss, l1_loss, l2_loss
from .quant import QuantScheme, calibrate_activations, quantize_model
from .weights_io import WeightsFormatError, load_weights, save_weights

_SCHEMES = {"float32": QuantScheme.FLOAT32, "mixed": QuantScheme.FULL_INT8,
            "int16": QuantScheme.INT8W_INT16A, "dynamic": QuantScheme.DYNAMIC_RANGE}
_SCHEME_NAMES = {v: k for k, v in _SCHEMES.items()}


class CliError(Exception):
    pass


def _log(msg):
    print(msg, file=sys.stderr)


def _print_config(cfg: MqnConfig):
    _log("resolved config:")
    for line in config_to_text(cfg).strip().splitlines():
        _log("  " + line)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from None


def _write(path, data: bytes):
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from None


def _load_model(args) -> ModelGraph:
    cfg = load_config(args.config)
    _print_config(cfg)
    try:
        return load_weights(_read(args.weights), cfg)
    except WeightsFormatError as e:
        raise CliError(f"{args.weights}: {e}") from None


def pad_to_multiple(img: np.ndarray, mult: int = 32):
    h, w = img.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return img, (h, w)
    mode = "reflect" if ph < h and pw < w else "edge"
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode), (h, w)


# ---------------------------------------------------------------------------
# subcommands

def cmd_init_weights(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    graph = init_weights(build_mqn(cfg), args.seed)
    _write(args.out, save_weights(graph))
    _log(f"wrote {args.out} (seed {args.seed})")
    return 0


def cmd_calibrate(args):
    graph = _load_model(args)
    if graph.quant is not None:
        raise CliError(f"{args.weights}: already quantized; calibrate a float container")
    paths = sorted(Path(args.images).glob("*.png"))
    if not paths:
        raise CliError(f"{args.images}: no .png calibration images found")
    images = [hdr.read_ldr(_read(p)) for p in paths]
    graph.calib = calibrate_activations(graph, images)
    _write(args.out, save_weights(graph))
    _log(f"calibrated on {len(images)} images -> {args.out}")
    return 0


def cmd_quantize(args):
    graph = _load_model(args)
    scheme = _SCHEMES[args.scheme]
    qg = quantize_model(graph, scheme, graph.calib, static_head=args.static_head)
    _write(args.out, save_weights(qg))
    _log(f"quantized scheme={args.scheme} -> {args.out}")
    return 0


def cmd_infer(args):
    graph = _load_model(args)
    have = graph.quant.scheme if graph.quant else QuantScheme.FLOAT32
    want = _SCHEMES[args.scheme] if args.scheme else have
    if want != have:
        if have == QuantScheme.FLOAT32:
            graph = quantize_model(graph, want, graph.calib)
        else:
            raise CliError(f"{args.weights}: container holds {_SCHEME_NAMES[have]} "
                           f"weights, cannot run as {args.scheme}")
    ldr = hdr.read_ldr(_read(args.input))
    padded, (h, w) = pad_to_multiple(ldr)
    out = run_model(graph, padded)[0, :h, :w, :]
    _write(args.out, hdr.write_rgbe(out))
    _log(f"{args.input} -> {args.out} ({_SCHEME_NAMES[want]})")
    return 0


def cmd_tmo(args):
    image = hdr.read_rgbe(_read(args.input))
    if args.random:
        if args.seed is None:
            raise CliError("--random requires --seed")
        ldr, params = tmo.generate_ldr_random(image, args.seed)
    else:
        kv = {}
        if args.params:
            for part in args.params.split(","):
                if "=" not in part:
                    raise CliError(f"--params: expected key=value, got {part!r}")
                k, v = part.split("=", 1)
                kv[k.strip()] = float(v)
        try:
            params = tmo.TmoParams(args.kind, **kv)
        except (TypeError, ValueError) as e:
            raise CliError(f"--params: {e}") from None
        ldr = tmo.tmo_apply(image, params)
    _write(args.out, hdr.write_ldr(ldr))
    sidecar = args.params_out or (str(args.out) + ".tmo")
    _write(sidecar, tmo.params_to_text(params).encode())
    _log(f"{args.input} -> {args.out} [{tmo.params_to_text(params).strip().replace(chr(10), ' ')}]")
    return 0


def _load_image_any(path: Path) -> np.ndarray:
    data = _read(path)
    if path.suffix.lower() == ".hdr":
        return hdr.read_rgbe(data)
    return hdr.read_ldr(data).astype(np.float32) / np.float32(255.0)


def cmd_eval(args):
    preds = sorted(p for p in Path(args.pred).iterdir()
                   if p.suffix.lower() in (".hdr", ".png"))
    if not preds:
        raise CliError(f"{args.pred}: no .hdr or .png images found")
    fx = SeededFeatureExtractor()
    rows = []
    for p in preds:
        matches = [g for g in Path(args.gt).iterdir() if g.stem == p.stem]
        if not matches:
            raise CliError(f"{args.gt}: no ground truth for {p.name}")
        pred = _load_image_any(p)
        gt = _load_image_any(matches[0])
        if pred.shape != gt.shape:
            raise CliError(f"{p.name}: shape {pred.shape} != gt {gt.shape}")
        if args.align:
            pred = metrics.percentile_align(pred, gt).image
        ps = metrics.psnr(gt, pred)
        rows.append((p.name, "inf" if math.isinf(ps) else f"{ps:.6f}",
                     f"{metrics.ssim(gt, pred):.6f}",
                     f"{l1_loss(gt, pred):.6f}", f"{l2_loss(gt, pred):.6f}",
                     f"{cosine_loss(gt, pred):.6f}", f"{fr_loss(gt, pred, fx):.6f}"))
    lines = ["image,psnr,ssim,l1,l2,cosine,fr"] + [",".join(r) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def cmd_inspect(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    if args.weights:
        graph = _load_model(args)
    else:
        graph = build_mqn(cfg)
    shapes = _node_shapes(graph, (cfg.input_size, cfg.input_size))
    header = f"{'node':<22}{'kind':<14}{'part':<10}{'out shape':<18}{'dtype':<7}{'params':>10}{'MACs':>14}"
    print(header)
    print("-" * len(header))
    tp = tm = 0
    for node in graph.nodes:
        p, m = node_budget(graph, node, shapes)
        tp += p
        tm += m
        dtype = "-"
        if "w" in node.attrs:
            dtype = str(graph.weights[node.attrs["w"]].dtype)
        h, w, c = shapes[node.name]
        print(f"{node.name:<22}{node.kind:<14}{node.partition:<10}"
              f"{f'{h}x{w}x{c}':<18}{dtype:<7}{p:>10}{m:>14}")
    print("-" * len(header))
    print(f"{'total':<64}{tp:>10}{tm:>14}")
    boundary = graph.boundary_edge
    print(f"backbone/head boundary edge: {boundary}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mqn",
                                 description="mixed-quantization inverse tone mapping toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-weights", help="write a seeded random MQNW container")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("calibrate", help="record activation ranges over an image set")
    p.add_argument("--weights", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quantize", help="convert a calibrated container to a scheme")
    p.add_argument("--weights", required=True)
    p.add_argument("--scheme", choices=sorted(_SCHEMES), required=True)
    p.add_argument("--static-head", action="store_true",
                   help="quantize the head statically too (granularity experiments)")
    p.add_argument("--config", default="default")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("infer", help="LDR png in, HDR radiance out")
    p.add_argument("input")
    p.add_argument("--weights", required=True)
    p.add_argument("--scheme", choices=("float32", "mixed", "int16"))
    p.add_argument("--config", default="default")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("tmo", help="tone map an HDR image to an 8-bit png")
    p.add_argument("input")
    p.add_argument("--kind", choices=("drago", "reinhard", "exposure"), default="drago")
    p.add_argument("--params", help="comma-separated key=value operator parameters")
    p.add_argument("--random", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--params-out", help="sidecar path (default: <out>.tmo)")
    p.set_defaults(func=cmd_tmo)

    p = sub.add_parser("eval", help="psnr/ssim/loss CSV over paired directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--align", action="store_true",
                   help="percentile-align predictions to ground truth first")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="per-layer parameter/MAC table")
    p.add_argument("--config", default="default")
    p.add_argument("--weights")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, WeightsFormatError, hdr.HdrFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
