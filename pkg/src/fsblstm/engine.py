"""Per-frame inference kernel for streaming.

Same arithmetic as :mod:`fsblstm.model` restricted to one frame, but with the
weights pre-arranged once so a frame costs a handful of matrix products.
Inside a frame the embedding is kept frequency-major (F x D).
"""

from __future__ import annotations

import math

import numpy as np

from . import primitives as P
from .config import ModelConfig


def _window_index(n_out: int, kernel: int, stride: int) -> np.ndarray:
    return np.arange(n_out)[:, None] * stride + np.arange(kernel)[None, :]


def _conv_matrix(w: np.ndarray) -> np.ndarray:
    """(Cout, Cin, K) -> (K*Cin, Cout) matching im2col rows ordered (k, cin)."""
    cout, cin, k = w.shape
    return np.ascontiguousarray(w.transpose(2, 1, 0).reshape(k * cin, cout))


def _deconv_matrix(w: np.ndarray) -> np.ndarray:
    """(Cin, Cout, K) -> (Cin, K*Cout) producing per-position (k, cout) blocks."""
    cin, cout, k = w.shape
    return np.ascontiguousarray(w.transpose(0, 2, 1).reshape(cin, k * cout))


def _ola_rows(cols: np.ndarray, stride: int, length: int) -> np.ndarray:
    """cols (n, K, C) overlap-added along rows at ``stride`` -> (length, C)."""
    n, k, c = cols.shape
    out = np.zeros(((n - 1) * stride + k, c), dtype=cols.dtype)
    if k % stride == 0:
        # kernel covers whole hops: add k/stride shifted contiguous slabs
        for j in range(k // stride):
            slab = cols[:, j * stride:(j + 1) * stride].reshape(n * stride, c)
            out[j * stride:j * stride + n * stride] += slab
        return out[:length]
    span = (n - 1) * stride + 1
    for i in range(k):
        out[i:i + span:stride] += cols[:, i]
    return out[:length]


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def _fused_lstm(wi, wh, bi, bh, hdim):
    """Stack input and recurrent weights into one ((In+H), 4H) matrix with gates reordered i, f, o, g."""
    order = np.r_[0:2 * hdim, 3 * hdim:4 * hdim, 2 * hdim:3 * hdim]
    w = np.concatenate([wi, wh], axis=1)[order]
    return np.ascontiguousarray(w.T), (bi + bh)[order]


def _lstm_step(x, h, c, w, bias, hdim):
    z = np.concatenate([x, h], axis=-1) @ w + bias
    s = _sigmoid(z[..., :3 * hdim])
    c = s[..., hdim:2 * hdim] * c + s[..., :hdim] * np.tanh(z[..., 3 * hdim:])
    return s[..., 2 * hdim:] * np.tanh(c), c


def _norm(z, gamma, beta, stats, count, eps):
    """One frame of cGLN; running statistics in float64. ``gamma`` broadcasts against ``z``."""
    z64 = z.astype(np.float64).ravel()
    s = stats[0] + float(np.add.reduce(z64))
    q = stats[1] + float(z64 @ z64)
    n = count + z.size
    mu = s / n
    inv = 1.0 / math.sqrt(max(q / n - mu * mu, 0.0) + eps)
    dt = z.dtype.type
    return (z - dt(mu)) * (gamma * dt(inv)) + beta, (np.array([s, q]), n)


def _prelu(z, a):
    if 0.0 <= a <= 1.0:
        return np.maximum(z, z * a)          # same values as the two-branch form for these slopes
    return np.where(z < 0, z * a, z)


class FrameEngine:
    """Precomputed layouts of a weight store for one-frame-in, one-frame-out inference."""

    def __init__(self, weights, dtype=np.float32):
        cfg: ModelConfig = weights.config
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        get = lambda k: np.asarray(weights[k], dtype=self.dtype)
        f = cfg.n_bins
        self.in_idx = _window_index(f, 3, 1)
        self.in_w = _conv_matrix(get("input_conv.w"))
        self.in_b = get("input_conv.b")
        self.out_w = _deconv_matrix(get("output_deconv.w"))
        self.out_b = get("output_deconv.b")
        self.blocks = []
        for prefix, kind in cfg.blocks():
            p = lambda k: get(f"{prefix}.{k}")
            blk = {
                "prefix": prefix, "kind": kind,
                "conv_w": _conv_matrix(p("conv.w")), "conv_b": p("conv.b"),
                "a1": float(p("prelu1.a")[0]),
                "g1": p("norm1.g"), "b1": p("norm1.b"),
                "hidden": p("lstm.wh").shape[1],
                "deconv_w": _deconv_matrix(p("deconv.w")), "deconv_b": p("deconv.b"),
            }
            if kind == "fb":
                blk.update(idx=_window_index(cfg.fb_positions, cfg.fb_kernel, cfg.fb_stride),
                           kernel=cfg.fb_kernel, stride=cfg.fb_stride, padded=cfg.fb_padded,
                           linT=np.ascontiguousarray(p("lin.w").T),
                           lin_b=p("lin.b"), g2=p("norm2.g"), b2=p("norm2.b"),
                           a2=float(p("prelu2.a")[0]))
            else:
                blk.update(idx=_window_index(cfg.num_subbands, cfg.sb_kernel, cfg.sb_stride),
                           kernel=cfg.sb_kernel, stride=cfg.sb_stride, padded=cfg.sb_padded)
            blk["lstm_w"], blk["bias"] = _fused_lstm(p("lstm.wi"), p("lstm.wh"), p("lstm.bi"),
                                                     p("lstm.bh"), blk["hidden"])
            self.blocks.append(blk)
        d = cfg.embed_dim
        self._macs = {
            "conv_freq": f * d * 2 * cfg.num_mics * 3,
            "deconv_freq": f * d * 2 * 3,
        }

    @staticmethod
    def _count(blk, positions, lstm_batch, lstm_in):
        P._count("conv_freq", positions * blk["conv_w"].size)
        P._count("deconv_freq", positions * blk["deconv_w"].size)
        P._count("lstm", lstm_batch * 4 * blk["hidden"] * (lstm_in + blk["hidden"]))

    def step(self, frame_ri: np.ndarray, state: dict) -> np.ndarray:
        """(2P, F) -> (2, F); ``state`` is the per-block dict of a StreamState, updated in place."""
        cfg = self.cfg
        dt = self.dtype
        f = cfg.n_bins
        xin = np.zeros((f + 2, frame_ri.shape[0]), dtype=dt)
        xin[1:-1] = frame_ri.T
        x = xin[self.in_idx].reshape(f, -1) @ self.in_w + self.in_b          # F, D
        P._count("conv_freq", self._macs["conv_freq"])
        for blk in self.blocks:
            st = state[blk["prefix"]]
            xp = np.zeros((blk["padded"], x.shape[1]), dtype=dt)
            xp[:f] = x
            cols = xp[blk["idx"]]                                             # pos, K, D
            n_pos = cols.shape[0]
            z = cols.reshape(n_pos, -1) @ blk["conv_w"] + blk["conv_b"]       # pos, C
            hdim = blk["hidden"]
            if blk["kind"] == "fb":
                a = z.T.reshape(-1)                                           # C*pos, channel-major
                a = _prelu(a, dt.type(blk["a1"]))
                a, st["norm1"] = _norm(a, blk["g1"], blk["b1"], *st["norm1"], P.EPS)
                st["h"], st["c"] = _lstm_step(a, st["h"], st["c"], blk["lstm_w"], blk["bias"], hdim)
                a = st["h"] @ blk["linT"] + blk["lin_b"]
                a, st["norm2"] = _norm(a, blk["g2"], blk["b2"], *st["norm2"], P.EPS)
                a = _prelu(a, dt.type(blk["a2"]))
                z = a.reshape(-1, n_pos).T                                    # pos, E
                self._count(blk, n_pos, 1, a.size)
                P._count("linear", blk["linT"].size)
            else:
                z = _prelu(z, dt.type(blk["a1"]))
                z, st["norm1"] = _norm(z, blk["g1"], blk["b1"], *st["norm1"], P.EPS)
                st["h"], st["c"] = _lstm_step(z, st["h"], st["c"], blk["lstm_w"], blk["bias"], hdim)
                self._count(blk, n_pos, n_pos, z.shape[1])
                z = st["h"]                                                   # bands, H'
            up = (z @ blk["deconv_w"]).reshape(n_pos, blk["kernel"], -1)
            x = x + (_ola_rows(up, blk["stride"], f) + blk["deconv_b"])
        up = (x @ self.out_w).reshape(f, 3, 2)
        P._count("deconv_freq", self._macs["deconv_freq"])
        y = _ola_rows(up, 1, f + 2)[1:-1] + self.out_b
        return y.T
