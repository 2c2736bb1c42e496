import json
import struct
import zlib

import numpy as np
import pytest

from fsblstm import weights as W
from fsblstm.checks import tiny_config
from fsblstm.complexity import count_params
from fsblstm.config import ModelConfig, preset


def test_same_seed_is_bit_identical():
    cfg = tiny_config()
    a, b = W.init_random(cfg, 7), W.init_random(cfg, 7)
    assert a.equals(b)
    assert W.to_bytes(a) == W.to_bytes(b)
    assert not a.equals(W.init_random(cfg, 8))


@pytest.mark.parametrize("name,expected", [("fsb-6ch", 1.96), ("fb6-6ch", 3.59), ("fb9-6ch", 5.38),
                                           ("fsb-1ch", 1.96), ("fsb-2ch", 1.96)])
def test_parameter_totals(name, expected):
    store = W.init_random(preset(name))
    assert abs(store.num_params / 1e6 - expected) <= 0.01
    assert store.num_params == count_params(preset(name))[0]


def test_init_rules():
    cfg = ModelConfig()
    w = W.init_random(cfg, 0)
    assert np.all(w["block0.fb.prelu1.a"] == 0.25)
    assert np.all(w["block1.sb.norm1.g"] == 1) and not w["block1.sb.norm1.b"].any()
    bound = 1 / np.sqrt(cfg.fb_hidden)
    assert np.abs(w["block0.fb.lstm.wi"]).max() <= bound
    assert np.abs(w["block0.fb.lstm.wi"]).max() > 0.9 * bound
    assert np.abs(w["input_conv.w"]).max() <= 1 / np.sqrt(12 * 3)
    assert all(t.dtype == np.float32 for t in w.values())


def test_round_trip(tmp_path):
    store = W.init_random(tiny_config(), 3)
    path = tmp_path / "w.fsbw"
    W.save(store, path)
    back = W.load(path)
    assert back.config == store.config
    assert back.equals(store)
    assert list(back) == list(store)


def test_file_layout():
    store = W.init_random(tiny_config(), 1)
    raw = W.to_bytes(store)
    assert raw[:4] == b"FSBW" and raw[4] == 1
    (n,) = struct.unpack("<Q", raw[5:13])
    manifest = json.loads(raw[13:13 + n])
    blob = raw[13 + n:]
    assert manifest["crc32"] == zlib.crc32(blob)
    first = manifest["tensors"][0]
    assert first["name"] == "input_conv.w" and first["dtype"] == "f32" and first["offset"] == 0
    np.testing.assert_array_equal(
        np.frombuffer(blob[:first["len"]], "<f4").reshape(first["shape"]), store["input_conv.w"])
    assert len(blob) == 4 * store.num_params


def test_corrupted_blob_fails_checksum():
    raw = bytearray(W.to_bytes(W.init_random(tiny_config(), 1)))
    raw[-10] ^= 0x01
    with pytest.raises(W.WeightFormatError, match="checksum"):
        W.from_bytes(bytes(raw))


@pytest.mark.parametrize("mutate,match", [
    (lambda r: b"XXXX" + r[4:], "magic"),
    (lambda r: r[:4] + b"\x02" + r[5:], "version"),
    (lambda r: r[:40], "truncated"),
    (lambda r: r[:-4], "truncated"),
    (lambda r: r[:13] + b"[" + r[14:], "manifest"),
])
def test_malformed_files(mutate, match):
    raw = W.to_bytes(W.init_random(tiny_config(), 1))
    with pytest.raises(W.WeightFormatError, match=match):
        W.from_bytes(mutate(raw))


def test_fb6_file_into_fsb_config_is_rejected(tmp_path):
    path = tmp_path / "fb6.fsbw"
    W.save(W.init_random(preset("fb6-6ch")), path)
    with pytest.raises(W.WeightFormatError):
        W.load(path, config=preset("fsb-6ch"))


def test_store_validates_shapes():
    cfg = tiny_config()
    good = dict(W.init_random(cfg))
    good["input_conv.b"] = np.zeros(cfg.embed_dim + 1, np.float32)
    with pytest.raises(W.WeightFormatError, match="input_conv.b"):
        W.WeightStore(cfg, good)
    del good["input_conv.b"]
    with pytest.raises(W.WeightFormatError, match="missing"):
        W.WeightStore(cfg, good)


def test_astype_and_with_tensors():
    store = W.init_random(tiny_config())
    s64 = store.astype(np.float64)
    assert s64["input_conv.w"].dtype == np.float64
    changed = store.with_tensors({"input_conv.b": np.ones_like(store["input_conv.b"])})
    assert np.all(changed["input_conv.b"] == 1) and not store.equals(changed)
    with pytest.raises(W.WeightFormatError):
        store.with_tensors({"nope": np.zeros(1)})


def test_config_json_round_trip_and_unknown_fields():
    cfg = preset("fsb-2ch", hop_ms=4)
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"bogus": 1})
