"""Tone mapping operators used to synthesize LDR inputs from HDR images.

Three global operators: Drago adaptive logarithmic, Reinhard
photographic, and a plain exposure/gamma curve. Drago and Reinhard
compress luminance and rescale the color channels by L_out/L_in, which
preserves chroma; the exposure curve applies per channel.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .hdr import validate_hdr

LUM_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])

# documented sampling ranges for random LDR generation
DRAGO_BIAS_RANGE = (0.7, 0.95)
REINHARD_KEY_RANGE = (0.09, 0.36)
EXPOSURE_STOPS_RANGE = (-2.0, 2.0)
EXPOSURE_GAMMA_RANGE = (1.8, 2.4)

_DRAGO_LDMAX = 100.0  # display peak in cd/m^2; prefactor 0.01*Ldmax


@dataclass(frozen=True)
class TmoParams:
    kind: str
    bias: float = 0.85      # drago, in (0, 1]
    key: float = 0.18       # reinhard, > 0
    stops: float = 0.0      # exposure
    gamma: float = 2.2      # exposure, > 0

    def __post_init__(self):
        if self.kind not in ("drago", "reinhard", "exposure"):
            raise ValueError(f"unknown TMO kind {self.kind!r}")
        if not 0 < self.bias <= 1:
            raise ValueError("drago bias must be in (0, 1]")
        if self.key <= 0:
            raise ValueError("reinhard key must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def luminance(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) @ LUM_WEIGHTS


def _quantize_u8(img01: np.ndarray) -> np.ndarray:
    # round half away from zero; inputs are clamped to [0, 1] first
    return np.clip(np.floor(img01 * 255.0 + 0.5), 0, 255).astype(np.uint8)


def tmo_apply(img: np.ndarray, p: TmoParams) -> np.ndarray:
    img = validate_hdr(img)
    rgb = img.astype(np.float64)
    lum = luminance(img)
    if p.kind == "exposure":
        mapped = np.clip(rgb * 2.0 ** p.stops, 0.0, None) ** (1.0 / p.gamma)
        return _quantize_u8(np.clip(mapped, 0.0, 1.0))
    lmax = float(lum.max())
    if lmax <= 0.0:
        warnings.warn("all-zero image; tone map is black")
        return np.zeros(img.shape, np.uint8)
    if p.kind == "drago":
        expo = np.log(p.bias) / np.log(0.5)
        prefactor = 0.01 * _DRAGO_LDMAX / np.log10(lmax + 1.0)
        ld = prefactor * np.log1p(lum) / np.log(2.0 + 8.0 * (lum / lmax) ** expo)
    else:  # reinhard (global)
        lavg = np.exp(np.mean(np.log(1e-6 + lum)))
        lm = p.key * lum / lavg
        ld = lm / (1.0 + lm)
    ratio = np.where(lum > 0.0, ld / np.where(lum > 0.0, lum, 1.0), 0.0)
    return _quantize_u8(np.clip(rgb * ratio[..., None], 0.0, 1.0))


def generate_ldr_random(img: np.ndarray, seed: int):
    """Tone map with a randomly chosen operator and random parameters
    from the documented ranges; returns (ldr, params) for reproducibility."""
    rng = np.random.default_rng(seed)
    kind = ("drago", "reinhard", "exposure")[rng.integers(0, 3)]
    if kind == "drago":
        p = TmoParams("drago", bias=float(rng.uniform(*DRAGO_BIAS_RANGE)))
    elif kind == "reinhard":
        p = TmoParams("reinhard", key=float(rng.uniform(*REINHARD_KEY_RANGE)))
    else:
        p = TmoParams("exposure", stops=float(rng.uniform(*EXPOSURE_STOPS_RANGE)),
                      gamma=float(rng.uniform(*EXPOSURE_GAMMA_RANGE)))
    return tmo_apply(img, p), p


def params_to_text(p: TmoParams) -> str:
    fields = {"drago": ("bias",), "reinhard": ("key",),
              "exposure": ("stops", "gamma")}[p.kind]
    lines = [f"kind={p.kind}"] + [f"{f}={getattr(p, f)!r}" for f in fields]
    return "\n".join(lines) + "\n"


def params_from_text(text: str) -> TmoParams:
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    kind = kv.pop("kind", None)
    if kind is None:
        raise ValueError("missing kind")
    return TmoParams(kind, **{k: float(v) for k, v in kv.items()})
