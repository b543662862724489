import numpy as np
import pytest

from mqn import backend


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    """Run a test under both kernel backends."""
    old = backend.get_backend()
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(old)


@pytest.fixture()
def rng():
    return np.random.default_rng(0xC0FFEE)


def random_conv_case(rng, max_dim=8, depthwise=False):
    """Random small conv instance within the oracle-suite size budget."""
    n = int(rng.integers(1, max_dim + 1))
    h = int(rng.integers(1, max_dim + 1))
    w = int(rng.integers(1, max_dim + 1))
    ci = int(rng.integers(1, max_dim + 1))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    padding = "same" if rng.random() < 0.7 or min(h, w) < k else "valid"
    x = rng.standard_normal((n, h, w, ci)).astype(np.float32)
    if depthwise:
        wts = rng.standard_normal((k, k, ci, 1)).astype(np.float32)
        b = rng.standard_normal(ci).astype(np.float32)
    else:
        co = int(rng.integers(1, max_dim + 1))
        wts = rng.standard_normal((k, k, ci, co)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
    return x, wts, b, stride, padding
