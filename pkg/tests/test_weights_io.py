import struct

import numpy as np
import pytest

from mqn.config import MqnConfig
from mqn.graph import build_mqn, forward_float, forward_mixed, image_to_batch, init_weights
from mqn.quant import QuantScheme, calibrate_activations, quantize_model
from mqn.weights_io import (WeightsFormatError, load_weights, read_container,
                            save_weights)


@pytest.fixture(scope="module")
def cfg():
    return MqnConfig(input_size=32)


@pytest.fixture(scope="module")
def seeded(cfg):
    return init_weights(build_mqn(cfg), 7)


def test_save_load_save_idempotent(seeded, cfg):
    data = save_weights(seeded)
    again = save_weights(load_weights(data, cfg))
    assert data == again


def test_float_weights_round_trip_bit_exact(seeded, cfg, rng):
    g2 = load_weights(save_weights(seeded), cfg)
    x = rng.random((1, 32, 32, 3)).astype(np.float32)
    assert np.array_equal(forward_float(seeded, x), forward_float(g2, x))


def test_quantized_round_trip(seeded, cfg, rng):
    imgs = [rng.integers(0, 256, (32, 32, 3), np.uint8) for _ in range(2)]
    calib = calibrate_activations(seeded, imgs)
    for scheme in (QuantScheme.FULL_INT8, QuantScheme.INT8W_INT16A,
                   QuantScheme.DYNAMIC_RANGE):
        qg = quantize_model(seeded, scheme, calib)
        data = save_weights(qg)
        qg2 = load_weights(data, cfg)
        assert save_weights(qg2) == data
        img = imgs[0]
        if scheme == QuantScheme.DYNAMIC_RANGE:
            a = forward_float(qg, image_to_batch(img))
            b = forward_float(qg2, image_to_batch(img))
        else:
            a = forward_mixed(qg, img)
            b = forward_mixed(qg2, img)
        assert np.array_equal(a, b)


def test_calibration_round_trip(seeded, cfg, rng):
    imgs = [rng.integers(0, 256, (32, 32, 3), np.uint8) for _ in range(2)]
    seeded.calib = calibrate_activations(seeded, imgs)
    try:
        g2 = load_weights(save_weights(seeded), cfg)
        assert g2.calib is not None
        for edge, (lo, hi) in seeded.calib.ranges.items():
            lo2, hi2 = g2.calib.ranges[edge]
            assert lo2 == np.float32(lo) and hi2 == np.float32(hi)
    finally:
        seeded.calib = None


def test_bad_magic(cfg):
    with pytest.raises(WeightsFormatError, match="magic"):
        load_weights(b"NOPE" + b"\x00" * 64, cfg)


def test_version_mismatch(cfg):
    data = b"MQNW" + struct.pack("<II", 9, 0)
    with pytest.raises(WeightsFormatError, match="version"):
        load_weights(data, cfg)


def test_truncation_names_offending_tensor(seeded, cfg):
    data = save_weights(seeded)
    with pytest.raises(WeightsFormatError, match="truncated at byte"):
        load_weights(data[: len(data) // 2], cfg)
    # the error names the tensor being read
    try:
        load_weights(data[: len(data) // 2], cfg)
    except WeightsFormatError as e:
        assert "tensor" in str(e)


def test_unknown_dtype_code():
    body = struct.pack("<H", 1) + b"x" + struct.pack("<BB", 9, 1) + struct.pack("<I", 1)
    data = b"MQNW" + struct.pack("<II", 1, 1) + body
    with pytest.raises(WeightsFormatError, match="dtype"):
        read_container(data)


def test_missing_tensor_reported(seeded, cfg):
    tensors, _ = read_container(save_weights(seeded))
    victim = sorted(tensors)[0]
    # rebuild the container without one tensor by writing manually
    from mqn.weights_io import _write_tensor
    out = [b"MQNW", struct.pack("<II", 1, len(tensors) - 1)]
    for name in sorted(tensors):
        if name != victim:
            _write_tensor(out, name, tensors[name], None)
    with pytest.raises(WeightsFormatError, match="missing"):
        load_weights(b"".join(out), cfg)


def test_hand_constructed_fixture_parses():
    """Container written by hand, byte for byte, per the format table."""
    blob = (b"MQNW"
            + struct.pack("<II", 1, 2)
            # tensor "b": f32 vector, no quant block
            + struct.pack("<H", 1) + b"b"
            + struct.pack("<BB", 0, 1)              # f32, 1-D
            + struct.pack("<I", 3)                  # dims (3,)
            + b"\x00"                                # no quant block
            + np.array([1.5, -2.0, 0.25], "<f4").tobytes()
            # tensor "w": int8 2x2 with per-channel quant on axis 1
            + struct.pack("<H", 1) + b"w"
            + struct.pack("<BB", 1, 2)              # i8, 2-D
            + struct.pack("<II", 2, 2)
            + b"\x01"                                # quant block present
            + struct.pack("<b", 1)                   # axis 1
            + struct.pack("<I", 2)
            + struct.pack("<ff", 0.5, 0.25)
            + struct.pack("<ii", 0, 0)
            + np.array([[1, -2], [3, -4]], "<i1").tobytes())
    tensors, qparams = read_container(blob)
    assert np.array_equal(tensors["b"], np.array([1.5, -2.0, 0.25], np.float32))
    assert tensors["w"].dtype == np.int8
    assert np.array_equal(tensors["w"], [[1, -2], [3, -4]])
    p = qparams["w"]
    assert p.axis == 1
    assert np.array_equal(p.scale, np.array([0.5, 0.25], np.float32))
    assert np.array_equal(p.zero_point, [0, 0])


def test_trailing_garbage_rejected(seeded, cfg):
    data = save_weights(seeded) + b"\x00"
    with pytest.raises(WeightsFormatError, match="trailing"):
        load_weights(data, cfg)


def test_static_head_container_round_trip(seeded, cfg, rng):
    imgs = [rng.integers(0, 256, (32, 32, 3), np.uint8) for _ in range(2)]
    calib = calibrate_activations(seeded, imgs)
    qg = quantize_model(seeded, QuantScheme.FULL_INT8, calib, static_head=True)
    data = save_weights(qg)
    qg2 = load_weights(data, cfg)
    assert qg2.quant.static_head
    assert np.array_equal(forward_mixed(qg, imgs[0]), forward_mixed(qg2, imgs[0]))
    assert save_weights(qg2) == data
