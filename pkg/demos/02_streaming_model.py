"""
One frame in, one frame out
===========================

The same weights run either on a whole utterance at once or one 2 ms frame
at a time with carried LSTM and normalization state. Both give the same
numbers; only the streaming form can run live.
"""

import time

import numpy as np

from fsblstm import ModelConfig, StreamState, forward_offline, init_random, mixture_ri, step_online

cfg = ModelConfig()                    # 6 mics, 3 modules of full-band + sub-band blocks
weights = init_random(cfg, seed=0)
print(f"{weights.num_params:,} parameters")

mics = np.random.default_rng(1).uniform(-0.5, 0.5, (cfg.num_mics, 8000)).astype(np.float32)
ri = mixture_ri(mics, cfg)             # (12, frames, 129): real/imag per mic
print("mixture features:", ri.shape)

t0 = time.perf_counter()
offline = forward_offline(ri, weights)
t1 = time.perf_counter()

state = StreamState.initial(cfg)
frames = [step_online(ri[:, t], state, weights) for t in range(ri.shape[1])]
t2 = time.perf_counter()
online = np.stack(frames, axis=1)

print(f"offline {t1 - t0:.2f} s, streaming {t2 - t1:.2f} s "
      f"({1e3 * (t2 - t1) / ri.shape[1]:.2f} ms per 2 ms frame)")
print("max |streaming - offline|:", np.abs(online - offline).max())
print(f"carried state: {state.lstm_nbytes():,} bytes of LSTM state + "
      f"{state.norm_values()} normalization scalars")
