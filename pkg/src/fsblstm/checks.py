"""Invariant suites behind ``fsblstm selfcheck``.

Each check compares an implementation against an independent oracle (naive
DFT, zero-interleave transposed convolution, central finite differences,
whole-signal processing) and returns :class:`Result` records.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import primitives as P
from .config import ModelConfig, StftConfig
from .stft import stream_identity, offline_stft, offline_istft


@dataclass
class Result:
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


# ---------------------------------------------------------------- oracles

def naive_dft(x: np.ndarray) -> np.ndarray:
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def zero_interleave_deconv(x, w, b, stride):
    """Transposed conv by dilating the input with zeros and running a flipped-kernel convolution."""
    cin, t, fin = x.shape
    _, cout, k = w.shape
    dil = np.zeros((cin, t, (fin - 1) * stride + 1), dtype=np.float64)
    dil[..., ::stride] = x
    dil = np.pad(dil, ((0, 0), (0, 0), (k - 1, k - 1)))
    fout = (fin - 1) * stride + k
    y = np.zeros((cout, t, fout))
    for o in range(cout):
        for n in range(fout):
            y[o, :, n] = np.einsum("ctk,ck->t", dil[:, :, n:n + k], w[:, o, ::-1]) + b[o]
    return y


def finite_difference(f: Callable[[], float], arr: np.ndarray, idx, h=1e-5) -> float:
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def max_rel_error(analytic, numeric, floor=1e-8) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


def gradcheck(build: Callable[[list], "ad.Var"], arrays: list[np.ndarray], rng, samples=12, h=1e-5) -> float:
    """Max relative error between tape gradients and central differences of ``build``.

    ``build`` maps a list of (array or Var) inputs to a scalar; up to
    ``samples`` random entries of every array are probed.
    """
    tape = ad.Tape()
    vs = [tape.var(a) for a in arrays]
    tape.backward(build(vs))
    worst = 0.0
    for a, v in zip(arrays, vs):
        grad = v.grad if v.grad is not None else np.zeros_like(a)
        flat = rng.choice(a.size, size=min(samples, a.size), replace=False)
        for j in flat:
            idx = np.unravel_index(j, a.shape)
            num = finite_difference(lambda: float(ad.value(build(arrays))), a, idx, h)
            worst = max(worst, max_rel_error(grad[idx], num))
    return worst


# ----------------------------------------------------------------- suites

def stft_suite(signals: int = 10, perturbations: int = 10, seed: int = 0) -> list[Result]:
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(cfg.dft_size)
    dft_err = np.max(np.abs(np.fft.rfft(x) - naive_dft(x)[:cfg.n_bins]))
    worst_rec = 0.0
    for _ in range(signals):
        x = rng.standard_normal(cfg.sample_rate)
        y = stream_identity(x, cfg)
        w = cfg.output_window
        worst_rec = max(worst_rec, np.sqrt(np.mean((y[w:] - x[w:]) ** 2) / np.mean(x[w:] ** 2)))
    x = rng.standard_normal(cfg.sample_rate // 4)
    base = stream_identity(x, cfg)
    leak = 0.0
    for n in rng.integers(cfg.output_window, len(x), perturbations):
        xp = x.copy()
        xp[n] += 1.0
        leak = max(leak, np.max(np.abs(stream_identity(xp, cfg)[:n - cfg.output_window + 1] - base[:n - cfg.output_window + 1])))
    spec = offline_stft(x, cfg)
    off = np.max(np.abs(offline_istft(spec, cfg, len(x)) - base))
    return [Result("dft vs naive O(N^2) DFT", dft_err, 1e-10),
            Result("stream reconstruction relative RMS", worst_rec, 1e-6),
            Result("causality: outputs <= n - oWS unchanged", leak, 0.0),
            Result("streaming vs offline synthesis", off, 1e-10)]


def deconv_suite(cases: int = 50, seed: int = 0) -> list[Result]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        k = int(rng.integers(1, 9))
        stride = int(rng.integers(1, k + 1))
        cin, cout, t, fin = (int(v) for v in rng.integers(1, 5, 4))
        x, w, b = rng.standard_normal((cin, t, fin)), rng.standard_normal((cin, cout, k)), rng.standard_normal(cout)
        worst = max(worst, np.max(np.abs(P.deconv_freq(x, w, b, stride) - zero_interleave_deconv(x, w, b, stride))))
    with P.mac_counter() as tally:
        P.deconv_freq(np.zeros((8, 1, 32)), np.zeros((8, 32, 8)), np.zeros(32), 4)
    ratio = tally.total / P.naive_deconv_macs(8, 32, 8, 4, 32)
    return [Result("deconv vs zero-interleave oracle", worst, 1e-6),
            Result("deconv MAC ratio vs 1/J (relative)", abs(ratio * 4 - 1), 0.05)]


def grad_suite(seed: int = 0) -> list[Result]:
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)
    out = []
    x, w, b = r(3, 2, 11), r(4, 3, 3), r(4)
    out.append(Result("grad conv_freq", gradcheck(
        lambda v: ad.sum(ad.square(ad.conv_freq(v[0], v[1], v[2], 2))), [x, w, b], rng), 1e-5))
    x, w, b = r(3, 2, 4), r(3, 2, 5), r(2)
    out.append(Result("grad deconv_freq", gradcheck(
        lambda v: ad.sum(ad.square(ad.deconv_freq(v[0], v[1], v[2], 3))), [x, w, b], rng), 1e-5))
    x, a = r(3, 5), np.array([0.3])
    out.append(Result("grad prelu", gradcheck(
        lambda v: ad.sum(ad.square(ad.prelu(v[0], v[1]))), [x, a], rng), 1e-5))
    x, w, b = r(4, 5), r(3, 5), r(3)
    out.append(Result("grad linear", gradcheck(
        lambda v: ad.sum(ad.square(ad.linear(v[0], v[1], v[2]))), [x, w, b], rng), 1e-5))
    h = 3
    args = [r(8, 4), r(4 * h, 4) * 0.5, r(4 * h, h) * 0.5, r(4 * h) * 0.1, r(4 * h) * 0.1, r(h) * 0.1, r(h) * 0.1]
    out.append(Result("grad lstm (8 steps)", gradcheck(
        lambda v: ad.sum(ad.square(ad.lstm(*v)[0])), args, rng), 1e-5))
    x, g, bb = r(5, 4), r(4), r(4)
    out.append(Result("grad cgln_2d", gradcheck(
        lambda v: ad.sum(ad.square(ad.cgln_2d(v[0], v[1], v[2])[0])), [x, g, bb], rng), 1e-5))
    x, g, bb = r(3, 4, 5), r(3), r(3)
    out.append(Result("grad cgln_3d", gradcheck(
        lambda v: ad.sum(ad.square(ad.cgln_3d(v[0], v[1], v[2])[0])), [x, g, bb], rng), 1e-5))
    return out


def tiny_config(num_mics: int = 2) -> ModelConfig:
    return ModelConfig(num_modules=1, embed_dim=4, fb_channels=2, fb_kernel=8, fb_stride=4, fb_hidden=6,
                       sb_channels=3, sb_kernel=5, sb_stride=5, sb_hidden=4, num_mics=num_mics)


def stream_suite(seed: int = 0, seconds: float = 0.25) -> list[Result]:
    from .model import StreamState, forward_offline, mixture_ri, step_online
    from .weights import init_random

    out = []
    rng = np.random.default_rng(seed)
    for cfg, label in ((tiny_config(), "tiny"), (ModelConfig(), "default")):
        weights = init_random(cfg, seed)
        x = (0.3 * rng.uniform(-1, 1, (cfg.num_mics, int(seconds * cfg.stft.sample_rate)))).astype(np.float32)
        ri = mixture_ri(x, cfg)
        ref = forward_offline(ri, weights)
        state = StreamState.initial(cfg)
        got = np.stack([step_online(ri[:, t], state, weights) for t in range(ri.shape[1])], axis=1)
        out.append(Result(f"step_online vs forward_offline ({label}, float32)", float(np.max(np.abs(got - ref))), 1e-5))
    return out


SUITES = {"stft": stft_suite, "grad": grad_suite, "stream": stream_suite, "deconv": deconv_suite}


def run_suites(names) -> list[Result]:
    results = []
    for name in names:
        results += SUITES[name]()
    return results
