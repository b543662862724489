"""Backend dispatch for the convolution kernels.

Import-time cost of the numba backend (JIT compile, cached on disk) is
paid lazily, only when a kernel is first requested with the numba
backend active.
"""

from .. import backend as _backend

_mods = {}

_KERNELS = ("conv2d_f32", "dwconv2d_f32", "conv2d_int_acc", "dwconv2d_int_acc")


def _module():
    name = _backend.get_backend()
    mod = _mods.get(name)
    if mod is None:
        if name == "numba":
            from . import _numba as mod
        else:
            from . import _numpy as mod
        _mods[name] = mod
    return mod


def __getattr__(attr):
    if attr in _KERNELS:
        return getattr(_module(), attr)
    raise AttributeError(attr)
