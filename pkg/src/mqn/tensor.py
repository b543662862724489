"""Tensor conventions and convolution geometry.

All feature maps are numpy arrays in N,H,W,C row-major layout. Supported
element types are float32 and the integer types used by the quantized
kernels (int8/int16/int32). Convolution weights are laid out
(kh, kw, Cin, Cout); depthwise weights are (kh, kw, C, 1).
"""

from dataclasses import dataclass

import numpy as np

F32 = np.float32
I8 = np.int8
I16 = np.int16
I32 = np.int32

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.int8),
                    np.dtype(np.int16), np.dtype(np.int32))

DTYPE_RANGE = {
    np.dtype(np.int8): (-128, 127),
    np.dtype(np.int16): (-32768, 32767),
    np.dtype(np.int32): (-(1 << 31), (1 << 31) - 1),
}


class ShapeError(ValueError):
    """Raised when an operand violates a shape or dtype contract."""


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution."""
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: str = "same"  # "same" | "valid"
    groups: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ShapeError("kernel extents must be positive")
        if self.stride < 1:
            raise ShapeError("stride must be positive")
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.groups < 1:
            raise ShapeError("groups must be positive")


def require_nhwc(x: np.ndarray, name: str = "tensor", dtype=None) -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name} must be a 4-D N,H,W,C array")
    if x.dtype not in SUPPORTED_DTYPES:
        raise ShapeError(f"{name} has unsupported dtype {x.dtype}")
    if dtype is not None and x.dtype != np.dtype(dtype):
        raise ShapeError(f"{name} must have dtype {np.dtype(dtype)}, got {x.dtype}")
    return x


def out_size(in_size: int, kernel: int, stride: int, padding: str) -> int:
    """Output spatial extent under the stated padding rule."""
    if padding == "same":
        return -(-in_size // stride)  # ceil
    if in_size < kernel:
        raise ShapeError(f"valid padding needs input >= kernel ({in_size} < {kernel})")
    return (in_size - kernel) // stride + 1


def pad_before(in_size: int, kernel: int, stride: int, padding: str) -> int:
    """Leading pad; the extra pixel of an odd total pad goes after (bottom/right)."""
    if padding == "valid":
        return 0
    out = out_size(in_size, kernel, stride, padding)
    total = max((out - 1) * stride + kernel - in_size, 0)
    return total // 2


def conv_output_shape(x_shape, w_shape, spec: ConvSpec):
    n, h, w, _ = x_shape
    kh, kw = w_shape[0], w_shape[1]
    return (n,
            out_size(h, kh, spec.stride, spec.padding),
            out_size(w, kw, spec.stride, spec.padding),
            w_shape[3] if spec.groups == 1 else x_shape[3])
