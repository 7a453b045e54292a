import struct

import numpy as np
import pytest

from varl.autodiff import Tensor
from varl.serialize import MAGIC, ContainerError, load_arrays, load_params, save_arrays, save_params


def test_roundtrip_f64(tmp_path):
    path = tmp_path / "params.varl"
    arrays = {
        "ctrl/w": np.random.default_rng(0).standard_normal((3, 4)),
        "ctrl/b": np.zeros(4),
        "scalar": np.array(1.5),
    }
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert np.array_equal(loaded[name], arrays[name])
        assert loaded[name].dtype == np.float64


def test_v1_header_layout(tmp_path):
    path = tmp_path / "one.varl"
    save_arrays(path, {"ab": np.arange(6.0).reshape(2, 3)})
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    version, count = struct.unpack("<II", blob[4:12])
    assert (version, count) == (1, 1)
    name_len = struct.unpack("<I", blob[12:16])[0]
    assert name_len == 2 and blob[16:18] == b"ab"
    rank = struct.unpack("<I", blob[18:22])[0]
    assert rank == 2
    assert struct.unpack("<II", blob[22:30]) == (2, 3)
    assert np.array_equal(np.frombuffer(blob[30:], dtype="<f8"), np.arange(6.0))


def test_u8_payload_roundtrip(tmp_path):
    path = tmp_path / "images.varl"
    imgs = np.random.default_rng(1).integers(0, 256, size=(5, 28, 28)).astype(np.uint8)
    labels = np.arange(5, dtype=np.int64)
    save_arrays(path, {"images": imgs, "labels": labels})
    loaded = load_arrays(path)
    assert np.array_equal(loaded["images"], imgs)
    assert loaded["images"].dtype == np.uint8
    assert np.array_equal(loaded["labels"], labels)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.varl"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ContainerError, match="magic"):
        load_arrays(path)


def test_truncated(tmp_path):
    path = tmp_path / "trunc.varl"
    save_arrays(path, {"x": np.ones(100)})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ContainerError, match="truncated"):
        load_arrays(path)


def test_params_roundtrip_bitwise(tmp_path):
    path = tmp_path / "p.varl"
    params = {"w": Tensor(np.random.default_rng(2).standard_normal((4, 4)), requires_grad=True)}
    save_params(path, params)
    again = load_params(path)
    assert np.array_equal(again["w"].data, params["w"].data)
    assert again["w"].requires_grad

    save_params(tmp_path / "p2.varl", again)
    assert (tmp_path / "p2.varl").read_bytes() == path.read_bytes()


def test_deterministic_bytes(tmp_path):
    a = {"z": np.ones(3), "a": np.zeros(2)}
    save_arrays(tmp_path / "one.varl", a)
    save_arrays(tmp_path / "two.varl", dict(reversed(list(a.items()))))
    assert (tmp_path / "one.varl").read_bytes() == (tmp_path / "two.varl").read_bytes()
