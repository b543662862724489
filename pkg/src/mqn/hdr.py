"""Radiance RGBE (.hdr) codec and 8-bit PNG I/O.

HDR images are float32 (H, W, 3) linear radiance, non-negative; LDR
images are uint8 (H, W, 3). The RGBE pixel rule: bytes (mr, mg, mb, e)
decode to m * 2**(e - 136) (zero when e == 0); encoding rounds mantissas
to nearest so the shared-exponent error on the max component stays
within 1/256 relative, with the max mantissa normalized into [128, 256).
"""

import io
import re

import numpy as np

_EXP_BIAS = 136  # 128 exponent offset + 8 mantissa bits


class HdrFormatError(ValueError):
    """Malformed Radiance file."""


def validate_hdr(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise HdrFormatError("HDR image must be HxWx3")
    if img.dtype != np.float32:
        img = img.astype(np.float32)
    if np.isnan(img).any():
        raise HdrFormatError("HDR image contains NaN")
    if (img < 0).any():
        raise HdrFormatError("HDR image contains negative components")
    return img


def validate_ldr(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise HdrFormatError("LDR image must be uint8 HxWx3")
    return img


# ---------------------------------------------------------------------------
# RGBE pixel conversion

def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    m = rgbe[..., :3].astype(np.float64)
    e = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(1.0, e - _EXP_BIAS)
    out = (m * scale[..., None]).astype(np.float32)
    out[e == 0] = 0.0
    return out


_RGBE_MAX = 255.0 * 2.0 ** 119  # largest exactly-representable value


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.minimum(np.asarray(rgb, np.float64), _RGBE_MAX)
    maxc = rgb.max(axis=-1)
    _, exp = np.frexp(maxc)  # maxc = f * 2**exp, f in [0.5, 1)
    mant = np.rint(rgb * np.ldexp(1.0, 8 - exp)[..., None])
    # a max mantissa that rounded up to 256 needs one more exponent step
    bump = mant.max(axis=-1) >= 256
    exp = exp + bump
    mant = np.where(bump[..., None], np.rint(rgb * np.ldexp(1.0, 8 - exp)[..., None]), mant)
    ebyte = exp + 128
    dead = (maxc <= 0) | (ebyte < 1)
    ebyte = np.clip(ebyte, 0, 255)
    out = np.empty(rgb.shape[:-1] + (4,), np.uint8)
    out[..., :3] = np.where(dead[..., None], 0, np.clip(mant, 0, 255)).astype(np.uint8)
    out[..., 3] = np.where(dead, 0, ebyte).astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# Radiance file format

def read_rgbe(data: bytes) -> np.ndarray:
    fh = io.BytesIO(data)
    magic = fh.readline()
    if not (magic.startswith(b"#?RADIANCE") or magic.startswith(b"#?RGBE")):
        raise HdrFormatError("bad magic; expected #?RADIANCE or #?RGBE")
    fmt_ok = False
    while True:
        line = fh.readline()
        if line == b"":
            raise HdrFormatError("unexpected end of header")
        line = line.rstrip(b"\r\n")
        if line == b"":
            break
        if line.startswith(b"FORMAT="):
            if line != b"FORMAT=32-bit_rle_rgbe":
                raise HdrFormatError(f"unsupported format {line.decode(errors='replace')!r}")
            fmt_ok = True
    if not fmt_ok:
        raise HdrFormatError("missing FORMAT=32-bit_rle_rgbe")
    res = fh.readline().rstrip(b"\r\n").decode("ascii", errors="replace")
    m = re.fullmatch(r"-Y (\d+) \+X (\d+)", res)
    if not m:
        raise HdrFormatError(f"unsupported resolution line {res!r}")
    h, w = int(m.group(1)), int(m.group(2))
    if h == 0 or w == 0:
        raise HdrFormatError("zero image dimensions")
    rgbe = np.empty((h, w, 4), np.uint8)
    for y in range(h):
        rgbe[y] = _read_scanline(fh, w, y)
    return validate_hdr(rgbe_to_float(rgbe))


def _read_scanline(fh, w, y):
    head = fh.read(4)
    if len(head) < 4:
        raise HdrFormatError(f"scanline {y}: unexpected end of data")
    if head[0] == 2 and head[1] == 2 and (head[2] << 8 | head[3]) == w and 8 <= w <= 32767:
        row = np.empty((4, w), np.uint8)
        for c in range(4):
            x = 0
            while x < w:
                b = fh.read(1)
                if not b:
                    raise HdrFormatError(f"scanline {y}: truncated RLE stream")
                n = b[0]
                if n > 128:  # run
                    count = n - 128
                    v = fh.read(1)
                    if not v:
                        raise HdrFormatError(f"scanline {y}: truncated RLE run")
                    if x + count > w:
                        raise HdrFormatError(f"scanline {y}: RLE run overruns the scanline")
                    row[c, x:x + count] = v[0]
                else:  # literals
                    if n == 0 or x + n > w:
                        raise HdrFormatError(f"scanline {y}: RLE literal overruns the scanline")
                    lit = fh.read(n)
                    if len(lit) < n:
                        raise HdrFormatError(f"scanline {y}: truncated RLE literals")
                    row[c, x:x + n] = np.frombuffer(lit, np.uint8)
                    count = n
                x += count
        return row.T
    rest = fh.read(4 * w - 4)
    if len(rest) < 4 * w - 4:
        raise HdrFormatError(f"scanline {y}: truncated flat scanline")
    return np.frombuffer(head + rest, np.uint8).reshape(w, 4)


def write_rgbe(img: np.ndarray) -> bytes:
    img = validate_hdr(img)
    h, w = img.shape[:2]
    rgbe = float_to_rgbe(img)
    out = [b"#?RADIANCE\n", b"FORMAT=32-bit_rle_rgbe\n", b"\n",
           f"-Y {h} +X {w}\n".encode("ascii")]
    use_rle = 8 <= w <= 32767
    for y in range(h):
        if use_rle:
            out.append(bytes((2, 2, w >> 8, w & 0xFF)))
            for c in range(4):
                out.append(_rle_encode(rgbe[y, :, c]))
        else:
            out.append(rgbe[y].tobytes())
    return b"".join(out)


def _rle_encode(row: np.ndarray) -> bytes:
    """Radiance new-style RLE: runs of >= 4 as (128+len, value), the rest
    as literal packets of <= 128 bytes."""
    out = bytearray()
    n = len(row)
    i = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and row[i + run] == row[i]:
            run += 1
        if run >= 4:
            out.append(128 + run)
            out.append(row[i])
            i += run
            continue
        # collect literals until the next long run
        j = i
        while j < n and j - i < 128:
            r = 1
            while j + r < n and r < 4 and row[j + r] == row[j]:
                r += 1
            if r >= 4:
                break
            j += r
        j = min(j, i + 128, n)
        out.append(j - i)
        out.extend(row[i:j].tobytes())
        i = j
    return bytes(out)


# ---------------------------------------------------------------------------
# PNG via Pillow

def read_ldr(data: bytes) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError
    try:
        img = Image.open(io.BytesIO(data))
    except UnidentifiedImageError as e:
        raise HdrFormatError(f"not a decodable image: {e}") from None
    if img.mode not in ("RGB", "L", "P", "RGBA"):
        raise HdrFormatError(f"unsupported PNG mode {img.mode}")
    arr = np.asarray(img.convert("RGB"), np.uint8)
    return validate_ldr(arr)


def write_ldr(img: np.ndarray) -> bytes:
    from PIL import Image
    img = validate_ldr(img)
    buf = io.BytesIO()
    Image.fromarray(img, "RGB").save(buf, "PNG")
    return buf.getvalue()
