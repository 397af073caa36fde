"""Binary checkpoint format and key-value config files."""

import struct

import numpy as np
import pytest

from derain.checkpoint import (MAGIC, VERSION, CheckpointError,
                               save_checkpoint, load_checkpoint,
                               save_config_kv, load_config_kv)


def sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "layer0.weight": rng.normal(size=(8, 3, 3, 3)).astype(np.float32),
        "layer0.bias": rng.normal(size=(8,)).astype(np.float32),
        "final.weight": rng.normal(size=(3, 8, 1, 1)).astype(np.float32),
    }


def test_roundtrip_bitwise(tmp_path):
    arrays = sample_arrays()
    p = tmp_path / "ck.bin"
    save_checkpoint(p, arrays)
    back = load_checkpoint(p)
    assert list(back) == list(arrays)
    for name in arrays:
        assert back[name].dtype == np.float32
        assert arrays[name].tobytes() == back[name].tobytes()


def test_save_is_deterministic(tmp_path):
    arrays = sample_arrays()
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(a, arrays)
    save_checkpoint(b, arrays)
    assert a.read_bytes() == b.read_bytes()


def test_header_layout(tmp_path):
    p = tmp_path / "ck.bin"
    save_checkpoint(p, {"w": np.zeros((2, 3), np.float32)})
    blob = p.read_bytes()
    assert blob[:8] == MAGIC
    version, count = struct.unpack_from("<II", blob, 8)
    assert version == VERSION and count == 1
    (nlen,) = struct.unpack_from("<H", blob, 16)
    assert nlen == 1 and blob[18:19] == b"w"
    assert blob[19] == 2                       # rank
    assert struct.unpack_from("<2I", blob, 20) == (2, 3)
    assert len(blob) == 28 + 4 * 6


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_bad_version_rejected(tmp_path):
    p = tmp_path / "ck.bin"
    save_checkpoint(p, {"w": np.zeros(3, np.float32)})
    blob = bytearray(p.read_bytes())
    struct.pack_into("<I", blob, 8, VERSION + 1)
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_trailing_bytes_rejected(tmp_path):
    p = tmp_path / "ck.bin"
    save_checkpoint(p, {"w": np.zeros(3, np.float32)})
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_empty_checkpoint(tmp_path):
    p = tmp_path / "ck.bin"
    save_checkpoint(p, {})
    assert load_checkpoint(p) == {}


def test_float64_input_downcast(tmp_path):
    p = tmp_path / "ck.bin"
    save_checkpoint(p, {"w": np.array([0.1, 0.2], dtype=np.float64)})
    back = load_checkpoint(p)
    np.testing.assert_array_equal(
        back["w"], np.array([0.1, 0.2], dtype=np.float32))


def test_config_kv_roundtrip(tmp_path):
    p = tmp_path / "model.cfg"
    save_config_kv(p, {"depth": 7, "unit": "gru", "slope": 0.2})
    back = load_config_kv(p)
    assert back == {"depth": "7", "unit": "gru", "slope": "0.2"}
    # keys come out sorted and one per line
    assert p.read_text().splitlines() == [
        "depth = 7", "slope = 0.2", "unit = gru"]


def test_config_kv_skips_comments(tmp_path):
    p = tmp_path / "model.cfg"
    p.write_text("# header\n\nwidth = 24\n")
    assert load_config_kv(p) == {"width": "24"}
