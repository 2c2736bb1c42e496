"""Named weight tensors, random initialization, and the FSBW file format.

File layout (all integers little-endian)::

    b"FSBW" | version u8 (=1) | manifest length u64 | manifest (UTF-8 JSON) | blob

The manifest is ``{"config": ..., "tensors": [{name, shape, dtype, offset,
len}], "crc32": ...}`` with offsets and lengths in bytes relative to the
blob start; the blob is every tensor as row-major float32, concatenated in
manifest order, and ``crc32`` covers the whole blob.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from typing import Iterator, Mapping

import numpy as np

from .config import ModelConfig

MAGIC = b"FSBW"
VERSION = 1


class WeightFormatError(ValueError):
    """Malformed, truncated, corrupted, or config-inconsistent weight file."""


def _fb_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, e, k, h, a = cfg.embed_dim, cfg.fb_channels, cfg.fb_kernel, cfg.fb_hidden, cfg.frame_embed_dim
    return {
        "conv.w": (e, d, k), "conv.b": (e,),
        "prelu1.a": (1,),
        "norm1.g": (a,), "norm1.b": (a,),
        "lstm.wi": (4 * h, a), "lstm.wh": (4 * h, h), "lstm.bi": (4 * h,), "lstm.bh": (4 * h,),
        "lin.w": (a, h), "lin.b": (a,),
        "norm2.g": (a,), "norm2.b": (a,),
        "prelu2.a": (1,),
        "deconv.w": (e, d, k), "deconv.b": (d,),
    }


def _sb_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, e, k, h = cfg.embed_dim, cfg.sb_channels, cfg.sb_kernel, cfg.sb_hidden
    return {
        "conv.w": (e, d, k), "conv.b": (e,),
        "prelu1.a": (1,),
        "norm1.g": (e,), "norm1.b": (e,),
        "lstm.wi": (4 * h, e), "lstm.wh": (4 * h, h), "lstm.bi": (4 * h,), "lstm.bh": (4 * h,),
        "deconv.w": (h, d, k), "deconv.b": (d,),
    }


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape, in canonical (file) order."""
    shapes = {"input_conv.w": (cfg.embed_dim, 2 * cfg.num_mics, 3), "input_conv.b": (cfg.embed_dim,)}
    for prefix, kind in cfg.blocks():
        block = _fb_shapes(cfg) if kind == "fb" else _sb_shapes(cfg)
        shapes.update({f"{prefix}.{k}": v for k, v in block.items()})
    shapes["output_deconv.w"] = (cfg.embed_dim, 2, 3)
    shapes["output_deconv.b"] = (2,)
    return shapes


def _fan_in(name: str, shapes: Mapping[str, tuple[int, ...]]) -> int:
    stem = name.rsplit(".", 1)[0]
    if stem.endswith("lstm"):
        return shapes[f"{stem}.wh"][1]
    w = shapes[f"{stem}.w"]
    if stem.endswith("lin"):
        return w[1]
    if stem.endswith("deconv"):
        return w[0] * w[2]
    return w[1] * w[2]


class WeightStore(Mapping[str, np.ndarray]):
    """Immutable mapping of canonical tensor names to arrays, plus the config they belong to."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, np.ndarray]):
        self.config = config
        self._tensors = dict(tensors)
        validate(config, self._tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def num_params(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def astype(self, dtype) -> "WeightStore":
        return WeightStore(self.config, {k: v.astype(dtype) for k, v in self._tensors.items()})

    def with_tensors(self, updates: Mapping[str, np.ndarray]) -> "WeightStore":
        merged = dict(self._tensors)
        merged.update(updates)
        return WeightStore(self.config, merged)

    def equals(self, other: "WeightStore") -> bool:
        """Bitwise equality of config and every tensor."""
        return (self.config == other.config and list(self) == list(other)
                and all(self[k].dtype == other[k].dtype and self[k].tobytes() == other[k].tobytes()
                        for k in self))


def validate(cfg: ModelConfig, tensors: Mapping[str, np.ndarray]) -> None:
    expected = parameter_shapes(cfg)
    missing = [k for k in expected if k not in tensors]
    extra = [k for k in tensors if k not in expected]
    if missing or extra:
        raise WeightFormatError(f"tensor names do not match config: missing={missing[:5]} extra={extra[:5]}")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != shape:
            raise WeightFormatError(f"{name}: shape {tuple(tensors[name].shape)} != expected {shape}")


def init_random(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> WeightStore:
    """Uniform(-k, k) with k = 1/sqrt(fan_in); PReLU slopes 0.25, norm gains 1 and shifts 0."""
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(cfg)
    out = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)
        if leaf[1] == "a" and leaf[0].endswith(("prelu1", "prelu2")):
            t = np.full(shape, 0.25)
        elif leaf[0].endswith(("norm1", "norm2")):
            t = np.ones(shape) if leaf[1] == "g" else np.zeros(shape)
        else:
            k = 1.0 / np.sqrt(_fan_in(name, shapes))
            t = rng.uniform(-k, k, size=shape)
        out[name] = t.astype(dtype)
    return WeightStore(cfg, out)


# ------------------------------------------------------------------ FSBW

def to_bytes(store: WeightStore) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, t in store.items():
        data = np.ascontiguousarray(t, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": "f32",
                        "offset": offset, "len": len(data)})
        blobs.append(data)
        offset += len(data)
    blob = b"".join(blobs)
    manifest = {"config": store.config.to_dict(), "tensors": entries, "crc32": zlib.crc32(blob)}
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + bytes([VERSION]) + struct.pack("<Q", len(head)) + head + blob


def from_bytes(raw: bytes, config: ModelConfig | None = None) -> WeightStore:
    if len(raw) < 13 or raw[:4] != MAGIC:
        raise WeightFormatError("not an FSBW file (bad magic)")
    if raw[4] != VERSION:
        raise WeightFormatError(f"unsupported FSBW version {raw[4]}")
    (mlen,) = struct.unpack("<Q", raw[5:13])
    if 13 + mlen > len(raw):
        raise WeightFormatError("truncated manifest")
    try:
        manifest = json.loads(raw[13:13 + mlen].decode("utf-8"))
        file_cfg = ModelConfig.from_dict(manifest["config"])
        entries = manifest["tensors"]
        crc = int(manifest["crc32"])
    except (ValueError, KeyError, TypeError) as exc:
        raise WeightFormatError(f"manifest parse failure: {exc}") from exc
    blob = raw[13 + mlen:]
    total = sum(int(e["len"]) for e in entries)
    if len(blob) < total:
        raise WeightFormatError(f"truncated blob: {len(blob)} bytes, manifest needs {total}")
    if zlib.crc32(blob) != crc:
        raise WeightFormatError("checksum mismatch")
    cfg = config or file_cfg
    tensors = {}
    for e in entries:
        if e.get("dtype") != "f32":
            raise WeightFormatError(f"{e.get('name')}: unsupported dtype {e.get('dtype')}")
        shape = tuple(int(s) for s in e["shape"])
        off, n = int(e["offset"]), int(e["len"])
        if n != 4 * int(np.prod(shape, dtype=np.int64)) or off + n > len(blob):
            raise WeightFormatError(f"{e['name']}: extent inconsistent with shape")
        tensors[e["name"]] = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=off).reshape(shape).astype(np.float32)
    return WeightStore(cfg, tensors)


def save(store: WeightStore, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(store))


def load(path: str | os.PathLike, config: ModelConfig | None = None) -> WeightStore:
    """Read an FSBW file; with ``config`` given, tensors are validated against it instead of the embedded one."""
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), config)
