"""
Training end to end on one clip
===============================

A small model is fit to a single noisy sum of sinusoids with the Wav+Mag loss
and Adam. Gradients flow through the inverse STFT, the network and the
forward STFT inside the loss. Pass a step count to shorten the run.
"""

import sys

from fsblstm.train import overfit_toy

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500


def progress(step, loss):
    if step % 50 == 0:
        print(f"step {step:4d}  loss {loss:.5f}")


run = overfit_toy(steps=steps, seed=0, progress=progress)
print(f"\nloss {run.initial_loss:.4f} -> {run.final_loss:.4f} ({100 * run.reduction:.1f}% lower)")
print(f"SI-SDR: mixture {run.si_sdr_mixture:.2f} dB, untrained {run.si_sdr_before:.2f} dB, "
      f"trained {run.si_sdr_after:.2f} dB")
