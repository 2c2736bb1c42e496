"""
Enhancing a WAV file the way the command line does
==================================================

Audio arrives in arbitrary chunk sizes; the enhancer regroups it into hops,
so the output does not depend on how the input was sliced.
"""

import tempfile
from pathlib import Path

import numpy as np

from fsblstm import Enhancer, init_random, preset, wavio
from fsblstm.model import real_time_factor

tmp = Path(tempfile.mkdtemp())
cfg = preset("fsb-2ch")
weights = init_random(cfg, seed=3)

noise = np.random.default_rng(0).uniform(-0.3, 0.3, (2, 8000))
wavio.write(tmp / "in.wav", wavio.from_float(noise, 16000, wavio.PCM))

wav = wavio.read(tmp / "in.wav")
x = wav.as_float()


def enhance(chunk):
    enh = Enhancer(weights)
    out = [enh.push(x[:, i:i + chunk]) for i in range(0, x.shape[1], chunk)] + [enh.flush()]
    return np.concatenate(out)[:x.shape[1]], enh


a, enh = enhance(32)
b, _ = enhance(333)
print("identical for 32- and 333-sample chunks:", np.array_equal(a, b))
print(f"real-time factor {real_time_factor(enh.frame_times, cfg):.2f} "
      f"({1e3 * np.mean(enh.frame_times):.2f} ms per 2 ms frame)")

wavio.write(tmp / "out.wav", wavio.from_float(a, wav.sample_rate, wav.format_tag))
print("wrote", tmp / "out.wav", wavio.read(tmp / "out.wav").data.shape)
