"""Layer primitives on plain numpy arrays.

Every primitive comes as a ``*_forward`` returning ``(outputs, ctx)`` and a
``*_backward(ctx, grads)`` returning the input gradients in argument order.
Feature maps are laid out channel x time x frequency; kernels never span
time, so no primitive mixes values across frames except the LSTM and the
cumulative normalizations.

Multiply-accumulates of the dense products are tallied while a
:func:`mac_counter` context is active.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS = 1e-5


# ---------------------------------------------------------------- MAC tally

@dataclass
class MacTally:
    total: int = 0
    by_op: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, n: int) -> None:
        self.total += int(n)
        self.by_op[name] = self.by_op.get(name, 0) + int(n)


_tally: MacTally | None = None


@contextlib.contextmanager
def mac_counter() -> Iterator[MacTally]:
    """Count dense-product MACs executed by primitives inside the block."""
    global _tally
    prev, _tally = _tally, MacTally()
    try:
        yield _tally
    finally:
        _tally = prev


def _count(name: str, n: int) -> None:
    if _tally is not None:
        _tally.add(name, n)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ------------------------------------------------------ frequency conv/deconv

def _frames(x: np.ndarray, size: int, stride: int) -> np.ndarray:
    """Strided windows along the last axis: (..., F) -> (..., n, size)."""
    return sliding_window_view(x, size, axis=-1)[..., ::stride, :]


def _overlap_add(cols: np.ndarray, stride: int) -> np.ndarray:
    """Inverse of :func:`_frames`: (..., n, size) -> (..., (n-1)*stride+size)."""
    n, size = cols.shape[-2:]
    out = np.zeros(cols.shape[:-2] + ((n - 1) * stride + size,), dtype=cols.dtype)
    span = (n - 1) * stride + 1
    for i in range(size):
        out[..., i:i + span:stride] += cols[..., i]
    return out


def conv_freq_forward(x, w, b, stride):
    """Convolution along frequency with kernel 1 along time.

    x: (Cin, T, Fin), w: (Cout, Cin, K), b: (Cout,) -> (Cout, T, Fout) with
    Fout = (Fin - K)/stride + 1. The frequency length must already be padded
    so the stride divides evenly.
    """
    _check(x.ndim == 3 and w.ndim == 3, "conv_freq expects x (Cin,T,F) and w (Cout,Cin,K)")
    cin, t, fin = x.shape
    cout, wcin, k = w.shape
    _check(wcin == cin, f"conv_freq: input has {cin} channels, kernel expects {wcin}")
    _check(b.shape == (cout,), "conv_freq: bias shape mismatch")
    _check(stride >= 1 and fin >= k and (fin - k) % stride == 0,
           f"conv_freq: length {fin} not reachable with kernel {k} stride {stride}")
    cols = _frames(x, k, stride)                       # Cin, T, Fout, K
    fout = cols.shape[2]
    y = np.tensordot(w, cols, axes=([1, 2], [0, 3]))   # Cout, T, Fout
    y += b[:, None, None]
    _count("conv_freq", cout * cin * k * t * fout)
    return y, (x, w, stride)


def conv_freq_backward(ctx, dy):
    x, w, stride = ctx
    cols = _frames(x, w.shape[2], stride)
    dw = np.tensordot(dy, cols, axes=([1, 2], [1, 2]))   # Cout, Cin, K
    db = dy.sum(axis=(1, 2))
    dcols = np.tensordot(w, dy, axes=([0], [0]))          # Cin, K, T, Fout
    dx = _overlap_add(dcols.transpose(0, 2, 3, 1), stride)
    return dx, dw, db


def deconv_freq_forward(x, w, b, stride):
    """Transposed convolution along frequency, as a linear map + overlap-add.

    x: (Cin, T, Fin), w: (Cin, Cout, K), b: (Cout,) -> (Cout, T, (Fin-1)*stride+K).
    Each input position is mapped to Cout*K values which are overlap-added at
    the stride, so no work is spent on interleaved zeros.
    """
    _check(x.ndim == 3 and w.ndim == 3, "deconv_freq expects x (Cin,T,F) and w (Cin,Cout,K)")
    cin, t, fin = x.shape
    wcin, cout, k = w.shape
    _check(wcin == cin, f"deconv_freq: input has {cin} channels, kernel expects {wcin}")
    _check(b.shape == (cout,), "deconv_freq: bias shape mismatch")
    _check(fin >= 1 and stride >= 1, "deconv_freq: empty input or bad stride")
    cols = np.tensordot(w, x, axes=([0], [0]))        # Cout, K, T, Fin
    y = _overlap_add(cols.transpose(0, 2, 3, 1), stride)
    y += b[:, None, None]
    _count("deconv_freq", cin * cout * k * t * fin)
    return y, (x, w, stride)


def deconv_freq_backward(ctx, dy):
    x, w, stride = ctx
    dcols = _frames(dy, w.shape[2], stride)             # Cout, T, Fin, K
    dx = np.tensordot(w, dcols, axes=([1, 2], [0, 3]))  # Cin, T, Fin
    dw = np.tensordot(x, dcols, axes=([1, 2], [1, 2]))  # Cin, Cout, K
    db = dy.sum(axis=(1, 2))
    return dx, dw, db


def naive_deconv_macs(cin: int, cout: int, kernel: int, stride: int, fin: int, frames: int = 1) -> int:
    """MACs of the zero-interleave form: every output tap over the dilated input."""
    return ((fin - 1) * stride + kernel) * cin * cout * kernel * frames


# ------------------------------------------------------- pointwise & linear

def prelu_forward(x, a):
    """PReLU with one shared slope; ``a`` is a 1-element array."""
    _check(np.size(a) == 1, "prelu slope must be a single value")
    neg = x < 0
    y = np.where(neg, x * a.reshape(()), x)
    return y, (x, a, neg)


def prelu_backward(ctx, dy):
    x, a, neg = ctx
    dx = np.where(neg, dy * a.reshape(()), dy)
    da = np.array([np.sum(dy * x * neg)], dtype=dy.dtype).reshape(a.shape)
    return dx, da


def linear_forward(x, w, b):
    """Per-frame affine map: x (..., N), w (M, N), b (M,) -> (..., M)."""
    _check(w.ndim == 2 and x.shape[-1] == w.shape[1], "linear: input size mismatch")
    _check(b.shape == (w.shape[0],), "linear: bias shape mismatch")
    y = x @ w.T + b
    _count("linear", w.size * (x.size // x.shape[-1]))
    return y, (x, w)


def linear_backward(ctx, dy):
    x, w = ctx
    dx = dy @ w
    dw = dy.reshape(-1, dy.shape[-1]).T @ x.reshape(-1, x.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


# ------------------------------------------------------------------- LSTM

def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_forward(x, wi, wh, bi, bh, h0, c0):
    """Unidirectional LSTM over the time axis.

    x: (..., T, N); wi: (4H, N); wh: (4H, H); bi, bh: (4H,); h0, c0: (..., H).
    Gate rows are ordered input, forget, candidate, output.
    Returns ((y (..., T, H), h_T, c_T), ctx).
    """
    hdim = wh.shape[1]
    _check(wi.shape == (4 * hdim, x.shape[-1]), "lstm: input weight shape mismatch")
    _check(wh.shape == (4 * hdim, hdim), "lstm: hidden weight shape mismatch")
    _check(bi.shape == (4 * hdim,) and bh.shape == (4 * hdim,), "lstm: bias shape mismatch")
    _check(h0.shape == x.shape[:-2] + (hdim,) and c0.shape == h0.shape, "lstm: state shape mismatch")
    steps = x.shape[-2]
    batch = x.size // max(x.shape[-1], 1) // max(steps, 1)
    _count("lstm", batch * steps * 4 * hdim * (x.shape[-1] + hdim))

    pre_x = x @ wi.T + (bi + bh)                       # (..., T, 4H)
    y = np.empty(x.shape[:-1] + (hdim,), dtype=pre_x.dtype)
    gates = np.empty(pre_x.shape, dtype=pre_x.dtype)
    cells = np.empty(y.shape, dtype=y.dtype)
    h, c = h0, c0
    whT = wh.T
    for t in range(steps):
        z = pre_x[..., t, :] + h @ whT
        g = gates[..., t, :]
        g[..., :2 * hdim] = _sigmoid(z[..., :2 * hdim])
        g[..., 2 * hdim:3 * hdim] = np.tanh(z[..., 2 * hdim:3 * hdim])
        g[..., 3 * hdim:] = _sigmoid(z[..., 3 * hdim:])
        c = g[..., hdim:2 * hdim] * c + g[..., :hdim] * g[..., 2 * hdim:3 * hdim]
        h = g[..., 3 * hdim:] * np.tanh(c)
        cells[..., t, :] = c
        y[..., t, :] = h
    return (y, h, c), (x, wi, wh, h0, c0, gates, cells, y)


def lstm_backward(ctx, grads):
    x, wi, wh, h0, c0, gates, cells, y = ctx
    dy, dhT, dcT = grads
    hdim = wh.shape[1]
    steps = x.shape[-2]
    dz = np.empty(gates.shape, dtype=gates.dtype)
    dh = np.zeros(h0.shape, dtype=gates.dtype) if dhT is None else dhT.copy()
    dc = np.zeros(c0.shape, dtype=gates.dtype) if dcT is None else dcT.copy()
    for t in reversed(range(steps)):
        if dy is not None:
            dh = dh + dy[..., t, :]
        g = gates[..., t, :]
        gi, gf, gg, go = (g[..., k * hdim:(k + 1) * hdim] for k in range(4))
        c = cells[..., t, :]
        c_prev = cells[..., t - 1, :] if t else c0
        tc = np.tanh(c)
        dc = dc + dh * go * (1.0 - tc * tc)
        d = dz[..., t, :]
        d[..., :hdim] = dc * gg * gi * (1.0 - gi)
        d[..., hdim:2 * hdim] = dc * c_prev * gf * (1.0 - gf)
        d[..., 2 * hdim:3 * hdim] = dc * gi * (1.0 - gg * gg)
        d[..., 3 * hdim:] = dh * tc * go * (1.0 - go)
        dc = dc * gf
        dh = d @ wh
    h_prev = np.concatenate([h0[..., None, :], y[..., :-1, :]], axis=-2)
    flat_dz = dz.reshape(-1, 4 * hdim)
    dwi = flat_dz.T @ x.reshape(-1, x.shape[-1])
    dwh = flat_dz.T @ h_prev.reshape(-1, hdim)
    db = flat_dz.sum(axis=0)
    dx = dz @ wi
    return dx, dwi, dwh, db, db.copy(), dh, dc


# ----------------------------------------------------- cumulative layer norm

def _cgln_core_forward(xt, stats, count, eps):
    """Normalize rows of xt (T, M) with statistics accumulated over all rows so far.

    ``stats`` holds the running (sum, sum of squares) before row 0 and
    ``count`` the number of elements they cover. Statistics are kept in
    float64 regardless of the data precision.
    """
    t, m = xt.shape
    x64 = xt.astype(np.float64)
    s = stats[0] + np.cumsum(x64.sum(axis=1))
    q = stats[1] + np.cumsum((x64 * x64).sum(axis=1))
    n = count + m * np.arange(1, t + 1, dtype=np.float64)
    mu = s / n
    var = np.maximum(q / n - mu * mu, 0.0)
    r = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu[:, None]) * r[:, None]
    new_stats = np.array([s[-1], q[-1]]) if t else np.asarray(stats, dtype=np.float64).copy()
    return xhat, new_stats, count + m * t, (x64, mu, r, n)


def _cgln_core_backward(ctx, dxhat, dstats):
    x64, mu, r, n = ctx
    dxhat = dxhat.astype(np.float64)
    xc = x64 - mu[:, None]
    dr = (dxhat * xc).sum(axis=1)
    dmu = -(dxhat * r[:, None]).sum(axis=1)
    dvar = -0.5 * dr * r ** 3
    dq = dvar / n
    ds = (dmu - 2.0 * mu * dvar) / n
    if dstats is not None and len(ds):
        ds[-1] += dstats[0]
        dq[-1] += dstats[1]
    rs = np.cumsum(ds[::-1])[::-1]
    rq = np.cumsum(dq[::-1])[::-1]
    dx = dxhat * r[:, None] + rs[:, None] + 2.0 * x64 * rq[:, None]
    if len(ds):
        dstats0 = np.array([ds.sum(), dq.sum()])
    else:
        dstats0 = np.zeros(2) if dstats is None else np.asarray(dstats, dtype=np.float64).copy()
    return dx, dstats0


def cgln_2d_forward(x, gamma, beta, stats=None, count=0, eps=EPS):
    """Causal global layer norm of a (T, A) sequence with per-feature affine.

    Returns ((y, stats_T, count_T), ctx); ``stats``/``count`` carry the running
    statistics so a stream can be normalized one frame at a time.
    """
    _check(x.ndim == 2, "cgln_2d expects (T, A)")
    _check(gamma.shape == (x.shape[1],) and beta.shape == gamma.shape, "cgln_2d: affine shape mismatch")
    stats = np.zeros(2) if stats is None else stats
    xhat, new_stats, new_count, core = _cgln_core_forward(x, stats, count, eps)
    xhat = xhat.astype(x.dtype)
    y = gamma * xhat + beta
    return (y, new_stats, new_count), (xhat, gamma, core)


def cgln_2d_backward(ctx, grads):
    xhat, gamma, core = ctx
    dy, dstats = grads[0], grads[1]
    dxhat = dy * gamma
    dx, dstats0 = _cgln_core_backward(core, dxhat, dstats)
    return dx.astype(dy.dtype), (dy * xhat).sum(axis=0), dy.sum(axis=0), dstats0


def cgln_3d_forward(x, gamma, beta, stats=None, count=0, eps=EPS):
    """Causal global layer norm of a (C, T, F) map; statistics pool C and F, affine is per channel."""
    _check(x.ndim == 3, "cgln_3d expects (C, T, F)")
    c, t, f = x.shape
    _check(gamma.shape == (c,) and beta.shape == gamma.shape, "cgln_3d: affine shape mismatch")
    stats = np.zeros(2) if stats is None else stats
    xt = x.transpose(1, 0, 2).reshape(t, c * f)
    xhat, new_stats, new_count, core = _cgln_core_forward(xt, stats, count, eps)
    xhat = xhat.reshape(t, c, f).transpose(1, 0, 2).astype(x.dtype)
    y = gamma[:, None, None] * xhat + beta[:, None, None]
    return (y, new_stats, new_count), (xhat, gamma, core)


def cgln_3d_backward(ctx, grads):
    xhat, gamma, core = ctx
    dy, dstats = grads[0], grads[1]
    c, t, f = dy.shape
    dxhat = (dy * gamma[:, None, None]).transpose(1, 0, 2).reshape(t, c * f)
    dxt, dstats0 = _cgln_core_backward(core, dxhat, dstats)
    dx = dxt.reshape(t, c, f).transpose(1, 0, 2).astype(dy.dtype)
    return dx, (dy * xhat).sum(axis=(1, 2)), dy.sum(axis=(1, 2)), dstats0


# ------------------------------------------------------ array-only shortcuts

def conv_freq(x, w, b, stride):
    return conv_freq_forward(x, w, b, stride)[0]


def deconv_freq(x, w, b, stride):
    return deconv_freq_forward(x, w, b, stride)[0]


def prelu(x, a):
    return prelu_forward(x, np.asarray(a, dtype=np.asarray(x).dtype).reshape(1))[0]


def linear(x, w, b):
    return linear_forward(x, w, b)[0]


def lstm_step(x, h, c, wi, wh, bi, bh):
    """One LSTM step: returns (h', c')."""
    (_, h1, c1), _ = lstm_forward(x[..., None, :], wi, wh, bi, bh, h, c)
    return h1, c1


def lstm(x, wi, wh, bi, bh, h0=None, c0=None):
    hdim = wh.shape[1]
    if h0 is None:
        h0 = np.zeros(x.shape[:-2] + (hdim,), dtype=x.dtype)
    if c0 is None:
        c0 = np.zeros_like(h0)
    return lstm_forward(x, wi, wh, bi, bh, h0, c0)[0]


def cgln_2d(x, gamma, beta, eps=EPS):
    return cgln_2d_forward(x, gamma, beta, eps=eps)[0][0]


def cgln_3d(x, gamma, beta, eps=EPS):
    return cgln_3d_forward(x, gamma, beta, eps=eps)[0][0]


class CumulativeNorm:
    """Frame-at-a-time cGLN: feed one frame, get it normalized with the running statistics."""

    def __init__(self, gamma, beta, eps=EPS):
        self.gamma = gamma
        self.beta = beta
        self.eps = eps
        self.stats = np.zeros(2)
        self.count = 0

    def __call__(self, frame):
        frame = np.asarray(frame)
        if frame.ndim == 1:
            (y, self.stats, self.count), _ = cgln_2d_forward(
                frame[None], self.gamma, self.beta, self.stats, self.count, self.eps)
            return y[0]
        (y, self.stats, self.count), _ = cgln_3d_forward(
            frame[:, None], self.gamma, self.beta, self.stats, self.count, self.eps)
        return y[:, 0]
