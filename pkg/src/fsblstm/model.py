"""FSB-LSTM network: input embedding, full-band and sub-band blocks, output projection.

All functions work on channel x time x frequency maps and take the network
parameters as a mapping from canonical name to array (or :class:`~fsblstm.autodiff.Var`
for training). Passing a state dict makes a call resume where the previous
one stopped, which is how frames are streamed one at a time; the offline path
is the same code with the whole utterance in one call.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .engine import FrameEngine
from .stft import StreamingStft

Params = Mapping[str, Any]


def _zeros(shape, like):
    return np.zeros(shape, dtype=ad.value(like).dtype)


def input_embed(mix_ri, params: Params):
    """(2P, T, F) -> (D, T, F): kernel 3 along frequency, one bin of zero padding per side."""
    w = params["input_conv.w"]
    if ad.value(mix_ri).shape[0] != ad.value(w).shape[1]:
        raise ValueError(f"expected {ad.value(w).shape[1]} input channels (2 x mics), "
                         f"got {ad.value(mix_ri).shape[0]}")
    return ad.conv_freq(ad.pad_both(mix_ri, 1), w, params["input_conv.b"], 1)


def output_project(x, params: Params):
    """(D, T, F) -> (2, T, F) real/imag estimate; kernel 3 transposed conv trimmed one bin per side."""
    y = ad.deconv_freq(x, params["output_deconv.w"], params["output_deconv.b"], 1)
    f = ad.value(y).shape[-1]
    return ad.getitem(y, (Ellipsis, slice(1, f - 1)))


def _norm_state(state, name):
    s = state.get(name)
    return (None, 0) if s is None else s


def full_band_block(x, params: Params, prefix: str, cfg: ModelConfig, state: dict | None = None):
    """Compress each frame to one embedding, run an LSTM across frames, expand back, add residual.

    Returns ``(y, new_state)``.
    """
    p = lambda k: params[f"{prefix}.{k}"]
    state = {} if state is None else state
    d, t, f = ad.value(x).shape
    e, pos, hdim = cfg.fb_channels, cfg.fb_positions, cfg.fb_hidden

    z = ad.conv_freq(ad.pad_last(x, cfg.fb_padded - f), p("conv.w"), p("conv.b"), cfg.fb_stride)
    z = ad.reshape(ad.transpose(z, (1, 0, 2)), (t, e * pos))
    z = ad.prelu(z, p("prelu1.a"))
    z, n1, c1 = ad.cgln_2d(z, p("norm1.g"), p("norm1.b"), *_norm_state(state, "norm1"))
    h0 = state.get("h", _zeros((hdim,), x))
    c0 = state.get("c", _zeros((hdim,), x))
    z, h1, cell1 = ad.lstm(z, p("lstm.wi"), p("lstm.wh"), p("lstm.bi"), p("lstm.bh"), h0, c0)
    z = ad.linear(z, p("lin.w"), p("lin.b"))
    z, n2, c2 = ad.cgln_2d(z, p("norm2.g"), p("norm2.b"), *_norm_state(state, "norm2"))
    z = ad.prelu(z, p("prelu2.a"))
    z = ad.transpose(ad.reshape(z, (t, e, pos)), (1, 0, 2))
    z = ad.deconv_freq(z, p("deconv.w"), p("deconv.b"), cfg.fb_stride)
    y = ad.add(x, ad.getitem(z, (Ellipsis, slice(0, f))))
    return y, {"h": h1, "c": cell1, "norm1": (n1, c1), "norm2": (n2, c2)}


def sub_band_block(x, params: Params, prefix: str, cfg: ModelConfig, state: dict | None = None):
    """Down-sample frequency into sub-bands, run one shared LSTM per sub-band, expand back, add residual.

    Each sub-band keeps its own recurrent state; the LSTM weights are shared.
    Returns ``(y, new_state)``.
    """
    p = lambda k: params[f"{prefix}.{k}"]
    state = {} if state is None else state
    d, t, f = ad.value(x).shape
    bands, hdim = cfg.num_subbands, cfg.sb_hidden

    z = ad.conv_freq(ad.pad_last(x, cfg.sb_padded - f), p("conv.w"), p("conv.b"), cfg.sb_stride)
    z = ad.prelu(z, p("prelu1.a"))
    z, n1, c1 = ad.cgln_3d(z, p("norm1.g"), p("norm1.b"), *_norm_state(state, "norm1"))
    z = ad.transpose(z, (2, 1, 0))                                   # bands, T, E'
    h0 = state.get("h", _zeros((bands, hdim), x))
    c0 = state.get("c", _zeros((bands, hdim), x))
    z, h1, cell1 = ad.lstm(z, p("lstm.wi"), p("lstm.wh"), p("lstm.bi"), p("lstm.bh"), h0, c0)
    z = ad.transpose(z, (2, 1, 0))                                   # H', T, bands
    z = ad.deconv_freq(z, p("deconv.w"), p("deconv.b"), cfg.sb_stride)
    y = ad.add(x, ad.getitem(z, (Ellipsis, slice(0, f))))
    return y, {"h": h1, "c": cell1, "norm1": (n1, c1)}


BLOCKS = {"fb": full_band_block, "sb": sub_band_block}


def run(mix_ri, params: Params, cfg: ModelConfig, state: dict | None = None):
    """Network on a (2P, T, F) segment, resuming from ``state``; returns ``(out (2,T,F), new_state)``."""
    state = {} if state is None else state
    new_state = {}
    x = input_embed(mix_ri, params)
    for prefix, kind in cfg.blocks():
        x, new_state[prefix] = BLOCKS[kind](x, params, prefix, cfg, state.get(prefix))
    return output_project(x, params), new_state


def forward_offline(mix_ri, weights) -> np.ndarray:
    """Whole-utterance enhancement of stacked mixture RI (2P, T, F) -> (2, T, F)."""
    _check_shape(mix_ri, weights.config)
    return run(np.asarray(mix_ri), weights, weights.config)[0]


def forward_stepwise(mix_ri, params: Params, cfg: ModelConfig):
    """Frame-by-frame execution through :func:`run`; differentiable when params are Vars."""
    state: dict = {}
    outs = []
    for t in range(ad.value(mix_ri).shape[1]):
        y, state = run(ad.getitem(mix_ri, (slice(None), slice(t, t + 1))), params, cfg, state)
        outs.append(y)
    return ad.concat(outs, axis=1)


def _check_shape(mix_ri, cfg: ModelConfig) -> None:
    shape = np.shape(ad.value(mix_ri))
    if len(shape) != 3 or shape[0] != 2 * cfg.num_mics or shape[2] != cfg.n_bins:
        raise ValueError(f"expected (2*{cfg.num_mics}, T, {cfg.n_bins}) mixture, got {shape}")


# ---------------------------------------------------------------- streaming

@dataclass
class StreamState:
    """Per-stream recurrent state: LSTM (h, c) and cGLN running statistics for every block."""

    config: ModelConfig
    blocks: dict = field(default_factory=dict)
    frames: int = 0
    initialized: bool = True

    @classmethod
    def initial(cls, cfg: ModelConfig, dtype=np.float32) -> "StreamState":
        blocks = {}
        for prefix, kind in cfg.blocks():
            if kind == "fb":
                h = np.zeros(cfg.fb_hidden, dtype=dtype)
                blocks[prefix] = {"h": h, "c": h.copy(), "norm1": (np.zeros(2), 0), "norm2": (np.zeros(2), 0)}
            else:
                h = np.zeros((cfg.num_subbands, cfg.sb_hidden), dtype=dtype)
                blocks[prefix] = {"h": h, "c": h.copy(), "norm1": (np.zeros(2), 0)}
        return cls(cfg, blocks)

    def lstm_nbytes(self) -> int:
        return sum(b["h"].nbytes + b["c"].nbytes for b in self.blocks.values())

    def norm_values(self) -> int:
        """Running-statistic scalars kept per normalization (sum, sum of squares, count)."""
        return sum(3 for b in self.blocks.values() for k in b if k.startswith("norm"))


def step_online(frame_ri, state: StreamState, weights) -> np.ndarray:
    """One frame (2P, F) in, one enhanced RI frame (2, F) out; updates ``state`` in place."""
    if state is None or not state.initialized:
        raise ValueError("stream state is not initialized; use StreamState.initial(config)")
    cfg = weights.config
    frame_ri = np.asarray(frame_ri)
    if frame_ri.shape != (2 * cfg.num_mics, cfg.n_bins):
        raise ValueError(f"expected frame of shape {(2 * cfg.num_mics, cfg.n_bins)}, got {frame_ri.shape}")
    dtype = next(iter(state.blocks.values()))["h"].dtype
    key = (id(weights), dtype.str)
    engine = _engines.get(key)
    if engine is None or engine[0] is not weights:
        if len(_engines) >= _ENGINE_CACHE:
            _engines.pop(next(iter(_engines)))
        engine = _engines[key] = (weights, FrameEngine(weights, dtype))
    y = engine[1].step(frame_ri.astype(dtype, copy=False), state.blocks)
    state.frames += 1
    return y


_ENGINE_CACHE = 8
_engines: dict[tuple, tuple] = {}


class Enhancer:
    """Streaming multi-microphone enhancer accepting arbitrary chunk sizes.

    Audio is regrouped into hops internally, so output does not depend on how
    the input is chunked. :meth:`push` returns the output samples finalized so
    far (aligned with the input: output sample ``m`` estimates input time ``m``).
    """

    def __init__(self, weights, dtype=np.float32):
        self.weights = weights
        self.cfg = weights.config
        self.dtype = np.dtype(dtype)
        self.mics = [StreamingStft(self.cfg.stft, self.dtype) for _ in range(self.cfg.num_mics)]
        self.out = StreamingStft(self.cfg.stft, self.dtype)
        self.state = StreamState.initial(self.cfg, self.dtype)
        self._pending = np.zeros((self.cfg.num_mics, 0), dtype=self.dtype)
        self.frame_times: list[float] = []

    def _frame(self, hop_block: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        ri = np.empty((2 * self.cfg.num_mics, self.cfg.n_bins), dtype=self.dtype)
        for m, s in enumerate(self.mics):
            spec = s.push(hop_block[m])
            ri[2 * m] = spec.real
            ri[2 * m + 1] = spec.imag
        est = step_online(ri, self.state, self.weights)
        out = self.out.emit(est[0] + 1j * est[1])
        self.frame_times.append(time.perf_counter() - t0)
        return out

    def push(self, samples) -> np.ndarray:
        samples = np.asarray(samples, dtype=self.dtype)
        if samples.ndim == 1 and self.cfg.num_mics == 1:
            samples = samples[None]
        if samples.ndim != 2 or samples.shape[0] != self.cfg.num_mics:
            raise ValueError(f"expected {self.cfg.num_mics} channels, got shape {samples.shape}")
        buf = np.concatenate([self._pending, samples], axis=1)
        hop = self.cfg.stft.hop
        n = buf.shape[1] // hop
        outs = [self._frame(buf[:, k * hop:(k + 1) * hop]) for k in range(n)]
        self._pending = buf[:, n * hop:]
        return np.concatenate(outs) if outs else np.zeros(0, dtype=self.dtype)

    def flush(self) -> np.ndarray:
        """Pad the tail with zeros until every pushed sample has a finalized output."""
        hop = self.cfg.stft.hop
        rest = self._pending.shape[1]
        pad = (-rest) % hop + self.out.flush_chunks() * hop
        return self.push(np.zeros((self.cfg.num_mics, pad), dtype=self.dtype))


def enhance_stream(samples, weights, dtype=np.float32) -> np.ndarray:
    """Enhance (P, N) microphone signals frame by frame; returns N mono samples."""
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[None]
    if samples.shape[0] != weights.config.num_mics:
        raise ValueError(f"expected {weights.config.num_mics} channels, got {samples.shape[0]}")
    enh = Enhancer(weights, dtype)
    out = np.concatenate([enh.push(samples), enh.flush()])
    return out[:samples.shape[1]]


def mixture_ri(samples, cfg: ModelConfig, n_frames: int | None = None) -> np.ndarray:
    """Offline analysis of (P, N) signals into stacked RI planes (2P, T, F), mic-interleaved."""
    from .stft import offline_stft

    spec = offline_stft(np.asarray(samples), cfg.stft, n_frames)       # P, T, F
    ri = np.empty((2 * spec.shape[0],) + spec.shape[1:], dtype=np.asarray(samples).dtype)
    ri[0::2] = spec.real
    ri[1::2] = spec.imag
    return ri


def enhance_offline(samples, weights) -> np.ndarray:
    """Whole-utterance counterpart of :func:`enhance_stream`."""
    from .stft import offline_istft

    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[None]
    est = forward_offline(mixture_ri(samples, weights.config), weights)
    return offline_istft(est[0] + 1j * est[1], weights.config.stft, samples.shape[1])


def real_time_factor(frame_times, cfg: ModelConfig) -> float:
    """Mean per-frame compute time divided by the hop duration."""
    hop_s = cfg.stft.hop / cfg.stft.sample_rate
    return float(np.mean(frame_times)) / hop_s if len(frame_times) else math.nan
