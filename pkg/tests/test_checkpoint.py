import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from airground import checkpoint as ck
from airground import trainer as T
from airground.errors import CheckpointError
from airground.trainer import Trainer

from _tiny import tiny


def _sample():
    rng = np.random.default_rng(0)
    return {
        "a/w": rng.normal(size=(3, 4)).astype(np.float32),
        "a/b": np.zeros(4, dtype=np.float32),
        "step": np.array(7, dtype=np.int64),
        "mask": np.array([True, False]),
    }


def test_round_trip_bit_exact():
    t = _sample()
    data = ck.encode(t, {"k": [1, 2]}, "h")
    back, meta, manifest = ck.decode(data, "h")
    assert meta == {"k": [1, 2]} and manifest["version"] == ck.VERSION
    for k, v in t.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert np.array_equal(back[k], v)
    assert ck.encode(back, meta, "h") == data


def test_header_layout():
    data = ck.encode(_sample(), {}, "h")
    magic, version, mlen = struct.unpack_from("<8sIQ", data, 0)
    assert magic == b"AGCKPT\x00\x01" and version == 1
    assert data[20:20 + mlen].startswith(b"{")


def test_hash_mismatch_refused():
    data = ck.encode(_sample(), {}, "abc")
    with pytest.raises(CheckpointError, match="config hash mismatch"):
        ck.decode(data, "xyz")


def test_tampered_blob_fails_checksum():
    data = bytearray(ck.encode(_sample(), {}, "h"))
    data[-20] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum failure"):
        ck.decode(bytes(data))


def test_truncation_and_bad_header():
    data = ck.encode(_sample(), {}, "h")
    with pytest.raises(CheckpointError, match="truncated"):
        ck.decode(data[:-3])
    with pytest.raises(CheckpointError):
        ck.decode(data[:10])
    with pytest.raises(CheckpointError, match="bad magic"):
        ck.decode(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError, match="version mismatch"):
        ck.decode(data[:8] + struct.pack("<I", 2) + data[12:])
    with pytest.raises(CheckpointError, match="manifest"):
        ck.decode(data[:20] + b"\xff" * 10 + data[30:])


def test_save_and_load_files(tmp_path):
    path = tmp_path / "x.bin"
    ck.save(path, _sample(), {"m": 1}, "h")
    t, meta, _ = ck.load(path, "h")
    assert meta == {"m": 1} and np.array_equal(t["a/w"], _sample()["a/w"])
    with pytest.raises(CheckpointError):
        ck.load(tmp_path / "missing.bin")


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float32, np.float64, np.int64]), hnp.array_shapes(min_dims=0, max_dims=3, max_side=5)))
def test_any_array_round_trips(arr):
    back, _, _ = ck.decode(ck.encode({"x": arr}, {}, "h"))
    assert back["x"].shape == arr.shape and back["x"].dtype == arr.dtype
    assert np.array_equal(back["x"], arr, equal_nan=arr.dtype.kind == "f")


def test_trainer_save_load_save_identical(tmp_path):
    cfg = tiny()
    tr = Trainer(cfg)
    tr.iterate()
    path = tmp_path / "t.bin"
    T.save_checkpoint(tr, path)
    again = T.load_checkpoint(path, cfg)
    assert T.checkpoint_bytes(again) == path.read_bytes()


def test_trainer_refuses_other_config(tmp_path):
    tr = Trainer(tiny())
    path = tmp_path / "t.bin"
    T.save_checkpoint(tr, path)
    with pytest.raises(CheckpointError, match="config hash mismatch"):
        T.load_checkpoint(path, tiny(uav__epsilon=0.25))
    with pytest.raises(CheckpointError, match="config hash mismatch"):
        T.load_checkpoint(path, tiny(), use_icm=False)
