"""Minimal RIFF/WAVE reader and writer for 16-bit PCM and 32-bit float."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

PCM = 1
IEEE_FLOAT = 3
EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    pass


@dataclass
class WavFile:
    sample_rate: int
    data: np.ndarray          # (frames, channels), int16 or float32
    format_tag: int = PCM

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    def as_float(self) -> np.ndarray:
        """(channels, frames) float32 in [-1, 1)."""
        if self.data.dtype == np.int16:
            return (self.data.T.astype(np.float32) / 32768.0)
        return self.data.T.astype(np.float32)


def read(path: str | os.PathLike) -> WavFile:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    pos, fmt, data = 12, None, None
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavError("missing fmt or data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack("<H", fmt[24:26])[0]
    if tag == PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise WavError(f"unsupported sample format (tag {tag}, {bits} bits)")
    n = len(data) // block_align
    samples = np.frombuffer(data[:n * block_align], dtype=dtype).reshape(n, channels)
    return WavFile(rate, samples.astype(dtype.newbyteorder("=")), tag)


def write(path: str | os.PathLike, wav: WavFile) -> None:
    data = np.ascontiguousarray(wav.data)
    if wav.format_tag == PCM:
        payload = data.astype("<i2").tobytes()
        bits = 16
    elif wav.format_tag == IEEE_FLOAT:
        payload = data.astype("<f4").tobytes()
        bits = 32
    else:
        raise WavError(f"cannot write format tag {wav.format_tag}")
    channels = data.shape[1]
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", wav.format_tag, channels, wav.sample_rate,
                      wav.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload + (b"\0" if len(payload) & 1 else b"")
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def from_float(samples: np.ndarray, sample_rate: int, format_tag: int = IEEE_FLOAT) -> WavFile:
    """(channels, frames) or (frames,) float -> WavFile; PCM output is clipped and rounded."""
    x = np.asarray(samples, dtype=np.float32)
    if x.ndim == 1:
        x = x[None]
    if format_tag == PCM:
        data = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.T.copy()
    return WavFile(sample_rate, data, format_tag)
