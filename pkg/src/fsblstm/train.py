"""Wav+Mag loss, SI-SDR, Adam, and a single-clip overfitting harness."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import stft as S
from .config import ModelConfig, StftConfig
from .model import mixture_ri, run, forward_stepwise
from .weights import WeightStore, init_random

log = logging.getLogger(__name__)

SI_SDR_CAP = 100.0
MAG_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step


# ------------------------------------------------------------------ losses

def stft_ri(x, cfg: StftConfig, n_frames: int | None = None):
    """Differentiable offline STFT of a 1-D signal as (2, T, F) real/imag planes."""
    n = len(ad.value(x))
    n_frames = S.num_frames(cfg, n) if n_frames is None else n_frames
    return ad.custom("stft", lambda v: S.stft_ri_forward(v, cfg, n_frames),
                     lambda ctx, g: S.stft_ri_backward(cfg, ctx, g), x)


def istft_ri(ri, cfg: StftConfig, length: int):
    """Differentiable offline iSTFT of (2, T, F) real/imag planes."""
    return ad.custom("istft", lambda v: S.istft_ri_forward(v, cfg, length),
                     lambda ctx, g: S.istft_ri_backward(cfg, ctx, g), ri)


def _magnitude(ri):
    return ad.sqrt(ad.add(ad.add(ad.square(ad.getitem(ri, 0)), ad.square(ad.getitem(ri, 1))), MAG_FLOOR))


def wav_mag_loss(est, ref, cfg: StftConfig):
    """Mean |est - ref| plus mean |‖STFT est‖ - ‖STFT ref‖|, equally weighted."""
    n_est, n_ref = np.shape(ad.value(est)), np.shape(np.asarray(ad.value(ref)))
    if n_est != n_ref:
        raise ValueError(f"length mismatch: estimate {n_est} vs reference {n_ref}")
    wav = ad.mean(ad.absolute(ad.sub(est, ref)))
    mag = ad.mean(ad.absolute(ad.sub(_magnitude(stft_ri(est, cfg)), _magnitude(stft_ri(ref, cfg)))))
    return ad.add(wav, mag)


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, clipped to ±SI_SDR_CAP."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ValueError("SI-SDR undefined for an all-zero reference")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    noise = target - est
    num, den = float(target @ target), float(noise @ noise)
    if den == 0.0:
        return SI_SDR_CAP
    if num == 0.0:
        return -SI_SDR_CAP
    return float(np.clip(10.0 * math.log10(num / den), -SI_SDR_CAP, SI_SDR_CAP))


# --------------------------------------------------------------- optimizer

class Adam:
    """Adam over a dict of float arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ------------------------------------------------------------------ harness

def toy_config(num_mics: int = 1) -> ModelConfig:
    return ModelConfig(num_modules=1, embed_dim=8, fb_channels=4, fb_kernel=8, fb_stride=4, fb_hidden=32,
                       sb_channels=8, sb_kernel=5, sb_stride=5, sb_hidden=8, num_mics=num_mics)


def synthetic_pair(cfg: ModelConfig, seed: int = 0, seconds: float = 1.0, snr_db: float = 5.0,
                   n_tones: int = 3):
    """Sum of sinusoids (clean) and the same plus white noise on every mic (mixture)."""
    rng = np.random.default_rng(seed)
    sr = cfg.stft.sample_rate
    t = np.arange(int(round(seconds * sr))) / sr
    freqs = rng.uniform(200.0, 3000.0, n_tones)
    amps = rng.uniform(0.1, 0.3, n_tones)
    phases = rng.uniform(0, 2 * np.pi, n_tones)
    clean = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    noise_rms = np.sqrt(np.mean(clean ** 2)) * 10 ** (-snr_db / 20)
    mixture = clean[None] + noise_rms * rng.standard_normal((cfg.num_mics, len(t)))
    return mixture, clean


def model_loss(params: dict, mixture: np.ndarray, clean: np.ndarray, cfg: ModelConfig,
               stepwise: bool = False):
    """Wav+Mag loss of the enhanced mixture; differentiable in ``params``.

    Returns (loss, estimate waveform).
    """
    ri = mixture_ri(mixture, cfg)
    if stepwise:
        est_ri = forward_stepwise(ri, params, cfg)
    else:
        est_ri = run(ri, params, cfg)[0]
    est = istft_ri(est_ri, cfg.stft, len(clean))
    return wav_mag_loss(est, clean, cfg.stft), est


def loss_and_grads(values: dict[str, np.ndarray], mixture, clean, cfg: ModelConfig, stepwise=False):
    tape = ad.Tape()
    params = {k: tape.var(v) for k, v in values.items()}
    loss, est = model_loss(params, mixture, clean, cfg, stepwise)
    tape.backward(loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in params.items()}
    return float(loss.value), grads, np.asarray(ad.value(est))


@dataclass
class TrainRun:
    """Record of a training run; ``losses[i]`` is the loss seen before update ``i``."""

    config: ModelConfig
    seed: int
    steps: int
    lr: float
    losses: list[float] = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    si_sdr_before: float = math.nan
    si_sdr_after: float = math.nan
    si_sdr_mixture: float = math.nan
    weights: WeightStore | None = None

    @property
    def reduction(self) -> float:
        """1 - final/initial loss."""
        return 1.0 - self.final_loss / self.initial_loss

    def trace_csv(self) -> str:
        return ",".join(f"{x:.8g}" for x in self.losses + [self.final_loss])


def overfit_toy(cfg: ModelConfig | None = None, steps: int = 500, seed: int = 0, lr: float = 1e-3,
                seconds: float = 1.0, snr_db: float = 5.0, progress=None) -> TrainRun:
    """Fit the model to one synthetic clip with Adam (constant learning rate)."""
    cfg = cfg or toy_config()
    mixture, clean = synthetic_pair(cfg, seed, seconds, snr_db)
    values = {k: v.astype(np.float64) for k, v in init_random(cfg, seed).items()}
    opt = Adam(values, lr=lr)
    record = TrainRun(cfg, seed, steps, lr, si_sdr_mixture=si_sdr(mixture[0], clean))
    for step in range(steps + 1):
        loss, grads, est = loss_and_grads(values, mixture, clean, cfg)
        if not math.isfinite(loss):
            raise DivergenceError(step, loss)
        if step == 0:
            record.initial_loss = loss
            record.si_sdr_before = si_sdr(est, clean)
        if step == steps:
            record.final_loss = loss
            record.si_sdr_after = si_sdr(est, clean)
            break
        record.losses.append(loss)
        opt.step(grads)
        if progress is not None:
            progress(step, loss)
        elif step % 50 == 0:
            log.info("step %d loss %.6f", step, loss)
    record.weights = WeightStore(cfg, {k: v.astype(np.float32) for k, v in values.items()})
    return record
