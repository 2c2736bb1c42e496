"""Low-latency STFT with a long rectangular analysis window and a short synthesis window.

Each frame is the latest ``input_window`` samples (zeros before the stream
starts), zero-padded to ``dft_size``. Synthesis inverts the frame, keeps only
its last ``output_window`` samples, applies a Hann window scaled to sum to
one at the hop, and overlap-adds. Output sample ``m`` is therefore final once
input sample ``m + output_window - 1`` has arrived.

Frame ``t`` is the one completed by input chunk ``t``; its synthesis segment
covers aligned sample indices ``[(t+1)*hop - output_window, (t+1)*hop)``.
The streaming synthesizer emits ``output_window - hop`` pre-roll samples
before sample 0; :func:`offline_istft` and :class:`StreamingStft` both drop them.
"""

from __future__ import annotations

import math

import numpy as np

from .config import StftConfig


def synthesis_window(cfg: StftConfig) -> np.ndarray:
    """Periodic Hann of length oWS, scaled so its hop-shifted copies sum to one."""
    n = np.arange(cfg.output_window)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.output_window)
    return hann * (2.0 * cfg.hop / cfg.output_window)


def preroll(cfg: StftConfig) -> int:
    return cfg.output_window - cfg.hop


def num_frames(cfg: StftConfig, length: int) -> int:
    """Frames needed so every input sample is finalized in the output."""
    return math.ceil(length / cfg.hop) + preroll(cfg) // cfg.hop


class StftState:
    """Ring buffer for analysis and overlap-add accumulator for synthesis."""

    def __init__(self, cfg: StftConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.ring = np.zeros(cfg.input_window, dtype=self.dtype)
        self.accum = np.zeros(cfg.output_window, dtype=self.dtype)
        self.window = synthesis_window(cfg).astype(self.dtype)
        self.samples_in = 0
        self.samples_out = 0

    @property
    def nbytes(self) -> int:
        return self.ring.nbytes + self.accum.nbytes


def analysis_push(state: StftState, chunk) -> np.ndarray:
    """Append one hop of samples and return the spectrum of the latest frame (F bins)."""
    cfg = state.cfg
    chunk = np.asarray(chunk)
    if chunk.shape != (cfg.hop,):
        raise ValueError(f"chunk must have exactly {cfg.hop} samples, got {chunk.shape}")
    ring = state.ring
    ring[:-cfg.hop] = ring[cfg.hop:]
    ring[-cfg.hop:] = chunk
    state.samples_in += cfg.hop
    return np.fft.rfft(ring, n=cfg.dft_size)


def synthesis_push(state: StftState, spectrum) -> np.ndarray:
    """Overlap-add one frame and return the ``hop`` oldest finalized samples."""
    cfg = state.cfg
    spectrum = np.asarray(spectrum)
    if spectrum.shape != (cfg.n_bins,):
        raise ValueError(f"spectrum must have {cfg.n_bins} bins, got {spectrum.shape}")
    frame = np.fft.irfft(spectrum, n=cfg.dft_size)
    seg = frame[cfg.input_window - cfg.output_window:cfg.input_window]
    acc = state.accum
    acc += (seg * state.window).astype(state.dtype)
    out = acc[:cfg.hop].copy()
    acc[:-cfg.hop] = acc[cfg.hop:]
    acc[-cfg.hop:] = 0
    state.samples_out += cfg.hop
    return out


class StreamingStft:
    """Analysis/synthesis pair for one channel with aligned output indexing."""

    def __init__(self, cfg: StftConfig, dtype=np.float32):
        self.cfg = cfg
        self.analysis = StftState(cfg, dtype)
        self.synthesis = StftState(cfg, dtype)
        self._skip = preroll(cfg)

    def push(self, chunk) -> np.ndarray:
        return analysis_push(self.analysis, chunk)

    def emit(self, spectrum) -> np.ndarray:
        """Synthesize a frame; returns aligned samples (pre-roll dropped, may be empty)."""
        out = synthesis_push(self.synthesis, spectrum)
        if self._skip:
            drop = min(self._skip, len(out))
            self._skip -= drop
            out = out[drop:]
        return out

    def flush_chunks(self) -> int:
        """Zero chunks to push after the last input so every sample is finalized."""
        return preroll(self.cfg) // self.cfg.hop


# ------------------------------------------------------------ offline forms

def _frame_signal(x: np.ndarray, cfg: StftConfig, n_frames: int) -> np.ndarray:
    lead = cfg.input_window - cfg.hop
    total = lead + n_frames * cfg.hop
    padded = np.zeros(x.shape[:-1] + (total,), dtype=x.dtype)
    n = min(x.shape[-1], total - lead)
    padded[..., lead:lead + n] = x[..., :n]
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.input_window, axis=-1)
    return view[..., ::cfg.hop, :][..., :n_frames, :]


def offline_stft(x, cfg: StftConfig, n_frames: int | None = None) -> np.ndarray:
    """Whole-signal analysis: (..., N) -> (..., T, F) complex, T = :func:`num_frames`."""
    x = np.asarray(x)
    if n_frames is None:
        n_frames = num_frames(cfg, x.shape[-1])
    return np.fft.rfft(_frame_signal(x, cfg, n_frames), n=cfg.dft_size, axis=-1)


def _overlap_add(segments: np.ndarray, hop: int) -> np.ndarray:
    t, width = segments.shape[-2:]
    out = np.zeros(segments.shape[:-2] + ((t - 1) * hop + width,), dtype=segments.dtype)
    for k in range(width // hop):
        part = segments[..., k * hop:(k + 1) * hop]
        out[..., k * hop:k * hop + t * hop] += part.reshape(part.shape[:-2] + (t * hop,))
    return out


def offline_istft(spec, cfg: StftConfig, length: int) -> np.ndarray:
    """Whole-signal synthesis: (..., T, F) -> (..., length) on aligned indices."""
    spec = np.asarray(spec)
    frames = np.fft.irfft(spec, n=cfg.dft_size, axis=-1)
    segs = frames[..., cfg.input_window - cfg.output_window:cfg.input_window] * synthesis_window(cfg)
    y = _overlap_add(segs, cfg.hop)[..., preroll(cfg):]
    if y.shape[-1] < length:
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (length - y.shape[-1],), dtype=y.dtype)], axis=-1)
    return y[..., :length]


def stream_identity(x, cfg: StftConfig, dtype=np.float64) -> np.ndarray:
    """Push a signal through streaming analysis then synthesis, untouched in between."""
    x = np.asarray(x, dtype=dtype)
    s = StreamingStft(cfg, dtype)
    n_chunks = math.ceil(len(x) / cfg.hop)
    padded = np.zeros((n_chunks + s.flush_chunks()) * cfg.hop, dtype=dtype)
    padded[:len(x)] = x
    out = [s.emit(s.push(padded[k * cfg.hop:(k + 1) * cfg.hop]))
           for k in range(len(padded) // cfg.hop)]
    return np.concatenate(out)[:len(x)]


# ------------------------------------------------ differentiable wrappers

def stft_ri_forward(x, cfg: StftConfig, n_frames: int):
    """Real signal (N,) -> (2, T, F) stacked real/imag planes."""
    spec = offline_stft(x, cfg, n_frames)
    return np.stack([spec.real, spec.imag]), (len(x), n_frames)


def stft_ri_backward(cfg: StftConfig, ctx, g):
    length, n_frames = ctx
    n = cfg.dft_size
    full = np.zeros((n_frames, n), dtype=np.complex128)
    full[:, :cfg.n_bins] = g[0] + 1j * g[1]
    dframes = (np.fft.ifft(full, axis=-1).real * n)[:, :cfg.input_window]
    lead = cfg.input_window - cfg.hop
    dpad = _overlap_add(dframes, cfg.hop)
    dx = np.zeros(length, dtype=g.dtype)
    m = min(length, dpad.shape[-1] - lead)
    dx[:m] = dpad[lead:lead + m]
    return (dx,)


def istft_ri_forward(ri, cfg: StftConfig, length: int):
    """(2, T, F) real/imag planes -> (length,) signal."""
    return offline_istft(ri[0] + 1j * ri[1], cfg, length), ri.shape


def istft_ri_backward(cfg: StftConfig, ctx, g):
    shape = ctx
    n_frames = shape[1]
    width = (n_frames - 1) * cfg.hop + cfg.output_window
    gfull = np.zeros(width, dtype=g.dtype)
    m = min(len(g), width - preroll(cfg))
    gfull[preroll(cfg):preroll(cfg) + m] = g[:m]
    view = np.lib.stride_tricks.sliding_window_view(gfull, cfg.output_window)[::cfg.hop][:n_frames]
    dseg = view * synthesis_window(cfg)
    dframe = np.zeros((n_frames, cfg.dft_size), dtype=g.dtype)
    dframe[:, cfg.input_window - cfg.output_window:cfg.input_window] = dseg
    spec = np.fft.rfft(dframe, axis=-1) / cfg.dft_size
    scale = np.full(cfg.n_bins, 2.0)
    scale[0] = 1.0
    scale[-1] = 1.0
    dre = spec.real * scale
    dim = spec.imag * scale
    dim[:, 0] = 0.0
    dim[:, -1] = 0.0
    return (np.stack([dre, dim]).astype(g.dtype),)
