"""Kernel backend selection.

Two interchangeable kernel implementations exist: numba-jitted loops
(fast) and pure-numpy slice accumulation (no compile step). Both produce
bit-identical results; selection is via the MQN_BACKEND environment
variable ("numba" or "numpy") or `set_backend` at runtime.

MQN_THREADS caps numba's internal parallelism (0 = sequential, unset =
numba's default). Results do not depend on the thread count: every
output element is computed by exactly one thread.
"""

import os
import warnings

_backend = None


def _detect_default() -> str:
    env = os.environ.get("MQN_BACKEND", "").strip().lower()
    if env in ("numba", "numpy"):
        return env
    if env:
        raise ValueError(f"MQN_BACKEND must be 'numba' or 'numpy', got {env!r}")
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        warnings.warn("numba not available; falling back to pure-numpy kernels")
        return "numpy"


def get_backend() -> str:
    global _backend
    if _backend is None:
        set_backend(_detect_default())
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba":
        import numba
        n = thread_count()
        if n is not None:
            numba.set_num_threads(min(max(n, 1), numba.config.NUMBA_NUM_THREADS))
    _backend = name


def thread_count():
    """Parallelism cap from MQN_THREADS: int, or None when unset."""
    raw = os.environ.get("MQN_THREADS", "").strip()
    if not raw:
        return None
    n = int(raw)
    if n < 0:
        raise ValueError("MQN_THREADS must be >= 0")
    return n
