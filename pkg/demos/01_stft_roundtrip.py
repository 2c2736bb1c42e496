"""
Low-latency STFT: analysis, synthesis, and the latency bound
============================================================

A long rectangular analysis window (16 ms) gives good frequency resolution,
while a short synthesis window (4 ms) keeps the algorithmic latency at 4 ms.
"""

import numpy as np

from fsblstm import StftConfig
from fsblstm.stft import StreamingStft, offline_istft, offline_stft, stream_identity, synthesis_window

cfg = StftConfig()
print(f"{cfg.sample_rate} Hz, analysis {cfg.input_window}, hop {cfg.hop}, synthesis {cfg.output_window}, "
      f"{cfg.n_bins} bins")

# Shifted copies of the synthesis window add up to one at every sample.
w = synthesis_window(cfg)
print("overlap-add of the synthesis window:", w.reshape(-1, cfg.hop).sum(axis=0)[:4], "...")

# Push one second of noise through the streaming pair, 32 samples at a time.
x = np.random.default_rng(0).standard_normal(cfg.sample_rate).astype(np.float32)
y = stream_identity(x, cfg, np.float32)
print(f"pass-through relative error: {np.sqrt(np.mean((y - x) ** 2) / np.mean(x ** 2)):.2e}")

# The offline transforms compute exactly the same frames.
spec = offline_stft(x.astype(np.float64), cfg)
print("frames:", spec.shape[0], " offline round trip max error:",
      np.abs(offline_istft(spec, cfg, len(x)) - x).max())

# Latency: with a filter applied in the STFT domain, a click at sample n can
# reach output samples from n - oWS + 1 on, never earlier.
gain = np.linspace(1.0, 0.1, cfg.n_bins)
s = StreamingStft(cfg, np.float64)
click = np.zeros(2048)
click[1000] = 1.0
out = np.concatenate([s.emit(s.push(click[k:k + cfg.hop]) * gain) for k in range(0, len(click), cfg.hop)])
print("first nonzero output index:", np.flatnonzero(np.abs(out) > 1e-12)[0],
      f"for a click at 1000 (earliest allowed {1000 - cfg.output_window + 1})")
