"""Closed-form parameter, MAC and state-buffer accounting.

Conventions: one MAC is one multiply-add of a dense product (convolutions,
transposed convolutions in their linear + overlap-add form, linear layers,
LSTM input and recurrent products). Biases, activations, normalizations and
overlap-add accumulations are not counted. Buffers assume 4-byte floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ModelConfig

BYTES_PER_VALUE = 4


@dataclass
class Row:
    name: str
    params: int = 0
    macs: int = 0


@dataclass
class ComplexityReport:
    params: int
    macs_per_frame: int
    frames_per_second: float
    buffer_bytes: int
    io_buffer_bytes: int
    rows: list[Row] = field(default_factory=list)
    buffer_rows: list[tuple[str, int]] = field(default_factory=list)
    io_buffer_rows: list[tuple[str, int]] = field(default_factory=list)

    @property
    def gmacs_per_second(self) -> float:
        return self.macs_per_frame * self.frames_per_second / 1e9

    def as_kv(self) -> str:
        """Line-oriented ``key=value`` form for scripts."""
        lines = [
            f"params={self.params}",
            f"params_m={self.params / 1e6:.4f}",
            f"macs_per_frame={self.macs_per_frame}",
            f"frames_per_second={self.frames_per_second:g}",
            f"gmacs_per_second={self.gmacs_per_second:.6f}",
            f"buffer_bytes={self.buffer_bytes}",
            f"buffer_kb={self.buffer_bytes / 1000:.3f}",
            f"io_buffer_bytes={self.io_buffer_bytes}",
        ]
        lines += [f"row.{r.name}.params={r.params}" for r in self.rows]
        lines += [f"row.{r.name}.macs={r.macs}" for r in self.rows]
        lines += [f"buffer.{n}={b}" for n, b in self.buffer_rows]
        lines += [f"io_buffer.{n}={b}" for n, b in self.io_buffer_rows]
        return "\n".join(lines)

    def as_table(self) -> str:
        w = max(len(r.name) for r in self.rows)
        out = [f"{'layer':<{w}}  {'params':>10}  {'MACs/frame':>12}"]
        out += [f"{r.name:<{w}}  {r.params:>10,}  {r.macs:>12,}" for r in self.rows]
        out.append(f"{'total':<{w}}  {self.params:>10,}  {self.macs_per_frame:>12,}")
        out.append("")
        out.append(f"parameters      {self.params / 1e6:.2f} M")
        out.append(f"compute         {self.gmacs_per_second:.3f} GMAC/s "
                   f"({self.frames_per_second:g} frames/s)")
        out.append(f"state buffer    {self.buffer_bytes:,} bytes ({self.buffer_bytes / 1000:.1f} KB)")
        out += [f"  {n:<28}{b:>8,}" for n, b in self.buffer_rows]
        out.append(f"STFT I/O buffer {self.io_buffer_bytes:,} bytes")
        out += [f"  {n:<28}{b:>8,}" for n, b in self.io_buffer_rows]
        return "\n".join(out)


# ----------------------------------------------------------------- layers

def _conv(cin, cout, k, positions):
    return cout * cin * k + cout, cout * cin * k * positions


def _deconv(cin, cout, k, positions_in):
    return cin * cout * k + cout, cin * cout * k * positions_in


def _lstm(n_in, hidden, batch, double_bias=True):
    biases = 2 if double_bias else 1
    return 4 * (n_in * hidden + hidden * hidden + biases * hidden), batch * 4 * hidden * (n_in + hidden)


def _linear(n_in, n_out):
    return n_in * n_out + n_out, n_in * n_out


def _fb_rows(cfg: ModelConfig, prefix: str, double_bias: bool) -> list[Row]:
    d, e, k, h = cfg.embed_dim, cfg.fb_channels, cfg.fb_kernel, cfg.fb_hidden
    a, pos = cfg.frame_embed_dim, cfg.fb_positions
    return [
        Row(f"{prefix}.conv", *_conv(d, e, k, pos)),
        Row(f"{prefix}.prelu1", 1),
        Row(f"{prefix}.norm1", 2 * a),
        Row(f"{prefix}.lstm", *_lstm(a, h, 1, double_bias)),
        Row(f"{prefix}.lin", *_linear(h, a)),
        Row(f"{prefix}.norm2", 2 * a),
        Row(f"{prefix}.prelu2", 1),
        Row(f"{prefix}.deconv", *_deconv(e, d, k, pos)),
    ]


def _sb_rows(cfg: ModelConfig, prefix: str, double_bias: bool) -> list[Row]:
    d, e, k, h, s = cfg.embed_dim, cfg.sb_channels, cfg.sb_kernel, cfg.sb_hidden, cfg.num_subbands
    return [
        Row(f"{prefix}.conv", *_conv(d, e, k, s)),
        Row(f"{prefix}.prelu1", 1),
        Row(f"{prefix}.norm1", 2 * e),
        Row(f"{prefix}.lstm", *_lstm(e, h, s, double_bias)),
        Row(f"{prefix}.deconv", *_deconv(h, d, k, s)),
    ]


def layer_rows(cfg: ModelConfig, double_bias: bool = True) -> list[Row]:
    f = cfg.n_bins
    rows = [Row("input_conv", *_conv(2 * cfg.num_mics, cfg.embed_dim, 3, f))]
    for prefix, kind in cfg.blocks():
        rows += (_fb_rows if kind == "fb" else _sb_rows)(cfg, prefix, double_bias)
    rows.append(Row("output_deconv", *_deconv(cfg.embed_dim, 2, 3, f)))
    return rows


def count_params(cfg: ModelConfig, double_bias: bool = True) -> tuple[int, list[Row]]:
    rows = layer_rows(cfg, double_bias)
    return sum(r.params for r in rows), rows


def count_macs(cfg: ModelConfig) -> tuple[int, float]:
    """(MACs per frame, GMAC/s at the configured hop)."""
    rows = layer_rows(cfg)
    per_frame = sum(r.macs for r in rows)
    return per_frame, per_frame * cfg.stft.frames_per_second / 1e9


def block_macs(cfg: ModelConfig, kind: str) -> int:
    """MACs per frame of one full-band ("fb") or sub-band ("sb") block."""
    rows = (_fb_rows if kind == "fb" else _sb_rows)(cfg, "x", True)
    return sum(r.macs for r in rows)


def buffer_bytes(cfg: ModelConfig) -> tuple[int, list[tuple[str, int]], list[tuple[str, int]]]:
    """Run-time state carried between frames.

    Returns (network state bytes, network rows, STFT I/O rows). The network
    state is the LSTM hidden/cell vectors plus three running scalars (sum, sum
    of squares, count) per causal normalization; the STFT input rings and
    output overlap-add accumulator are itemized separately.
    """
    rows = []
    for prefix, kind in cfg.blocks():
        if kind == "fb":
            rows.append((f"{prefix}.lstm_state", 2 * cfg.fb_hidden * BYTES_PER_VALUE))
            rows.append((f"{prefix}.norm_stats", 2 * 3 * BYTES_PER_VALUE))
        else:
            rows.append((f"{prefix}.lstm_state", 2 * cfg.sb_hidden * cfg.num_subbands * BYTES_PER_VALUE))
            rows.append((f"{prefix}.norm_stats", 3 * BYTES_PER_VALUE))
    io_rows = [
        ("stft.input_rings", cfg.num_mics * cfg.stft.input_window * BYTES_PER_VALUE),
        ("stft.overlap_add", cfg.stft.output_window * BYTES_PER_VALUE),
    ]
    return sum(b for _, b in rows), rows, io_rows


def lstm_state_bytes(cfg: ModelConfig) -> int:
    return sum(b for n, b in buffer_bytes(cfg)[1] if n.endswith("lstm_state"))


def analyze(cfg: ModelConfig) -> ComplexityReport:
    params, rows = count_params(cfg)
    macs, _ = count_macs(cfg)
    buf, buf_rows, io_rows = buffer_bytes(cfg)
    return ComplexityReport(params=params, macs_per_frame=macs,
                            frames_per_second=cfg.stft.frames_per_second,
                            buffer_bytes=buf, io_buffer_bytes=sum(b for _, b in io_rows),
                            rows=rows, buffer_rows=buf_rows, io_buffer_rows=io_rows)
