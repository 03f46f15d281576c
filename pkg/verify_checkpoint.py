import struct
import sys

import numpy as np
import pytest

from derain.checkpoint import (
    FORMAT_VERSION, MAGIC, check_param_shapes, decode_checkpoint, encode_checkpoint, load_checkpoint,
    save_checkpoint
)
from derain.errors import (
    CheckpointFormatError, CheckpointShapeError, CheckpointTruncatedError, CheckpointVersionError
)
from derain.models import build_srr, network_from_checkpoint
from derain.optim import Adam
from derain.schemas import SrrSpec


def _trained_params():
    rng = np.random.default_rng(0)
    params = {
        "conv.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "conv.bias": rng.standard_normal(4).astype(np.float32),
    }
    optimizer = Adam(params, lr=1e-3, weight_decay=1e-4)
    for _ in range(3):
        optimizer.step({k: rng.standard_normal(v.shape).astype(np.float32) for k, v in params.items()})
    return params, optimizer


def test_round_trip_is_bitwise(tmp_path):
    params, optimizer = _trained_params()
    path = save_checkpoint(tmp_path / "model.djrh", params, optimizer.state, {"kind": 0, "epoch": 3})
    loaded = load_checkpoint(path)

    assert loaded.header == {"kind": 0, "epoch": 3}
    for name, value in params.items():
        assert loaded.params[name].tobytes() == value.tobytes()
        assert loaded.adam_m[name].tobytes() == optimizer.state.m[name].tobytes()
        assert loaded.adam_v[name].tobytes() == optimizer.state.v[name].tobytes()
    assert loaded.adam_t == 3

    fresh = Adam({k: v.copy() for k, v in loaded.params.items()})
    loaded.restore_state(fresh.state)
    assert fresh.state.t == 3


def test_reencoding_gives_identical_bytes(tmp_path):
    params, optimizer = _trained_params()
    payload = encode_checkpoint(params, optimizer.state, {"kind": 1})
    loaded = decode_checkpoint(payload)
    fresh = Adam(loaded.params)
    loaded.restore_state(fresh.state)
    assert encode_checkpoint(loaded.params, fresh.state, loaded.header) == payload


def test_layout_starts_with_magic_and_version():
    payload = encode_checkpoint({"x": np.zeros(2, dtype=np.float32)})
    assert payload[:4] == MAGIC
    assert struct.unpack("<I", payload[4:8])[0] == FORMAT_VERSION


def test_corrupted_magic_is_format_error():
    payload = bytearray(encode_checkpoint({"x": np.zeros(2, dtype=np.float32)}))
    payload[0:4] = b"NOPE"
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(bytes(payload))


def test_future_version_is_version_error():
    payload = bytearray(encode_checkpoint({"x": np.zeros(2, dtype=np.float32)}))
    payload[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(bytes(payload))


def test_truncated_file_is_truncation_error():
    params, optimizer = _trained_params()
    payload = encode_checkpoint(params, optimizer.state)
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(payload[:-5])


def test_trailing_bytes_are_format_error():
    payload = encode_checkpoint({"x": np.zeros(2, dtype=np.float32)})
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(payload + b"\x00")


def test_shape_table_disagreement():
    with pytest.raises(CheckpointShapeError):
        check_param_shapes({"w": np.zeros((2, 2))}, {"w": np.zeros((2, 3))})
    with pytest.raises(CheckpointShapeError):
        check_param_shapes({"w": np.zeros(2)}, {"v": np.zeros(2)})


def test_header_describing_another_architecture_is_rejected(tmp_path):
    net = build_srr(SrrSpec(depth=3, width=4))
    header = {**net.header(), "width": 5}
    path = save_checkpoint(tmp_path / "bad.djrh", net.params, header=header)
    with pytest.raises(CheckpointShapeError):
        network_from_checkpoint(load_checkpoint(path))


def test_header_missing_architecture_fields(tmp_path):
    net = build_srr(SrrSpec(depth=3, width=4))
    header = {key: value for key, value in net.header().items() if key != "width"}
    path = save_checkpoint(tmp_path / "partial.djrh", net.params, header=header)
    with pytest.raises(CheckpointFormatError, match="width"):
        network_from_checkpoint(load_checkpoint(path))


def test_header_with_invalid_architecture(tmp_path):
    net = build_srr(SrrSpec(depth=3, width=4))
    path = save_checkpoint(tmp_path / "shallow.djrh", net.params, header={**net.header(), "depth": 1})
    with pytest.raises(CheckpointFormatError):
        network_from_checkpoint(load_checkpoint(path))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
