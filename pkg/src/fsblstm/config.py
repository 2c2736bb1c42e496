"""Model and transform hyper-parameters, plus the named presets."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class StftConfig:
    """Asymmetric-window STFT settings, all lengths in samples.

    The analysis frame is ``input_window`` long (rectangular), the synthesis
    segment is the last ``output_window`` samples of each inverse frame, and
    frames advance by ``hop``. Algorithmic latency equals ``output_window``.
    """

    sample_rate: int = 16000
    input_window: int = 256
    hop: int = 32
    output_window: int = 64
    dft_size: int = 256

    def __post_init__(self) -> None:
        for name in ("sample_rate", "input_window", "hop", "output_window", "dft_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.input_window % self.hop or self.output_window % self.hop:
            raise ValueError("input and output windows must be multiples of the hop")
        if self.output_window > self.input_window:
            raise ValueError("output window cannot exceed the input window")
        if self.output_window < 2 * self.hop:
            raise ValueError("synthesis needs at least 50% overlap (output_window >= 2*hop)")
        if self.dft_size < self.input_window:
            raise ValueError("dft_size must be >= input_window")
        if self.dft_size % 2:
            raise ValueError("dft_size must be even")

    @property
    def n_bins(self) -> int:
        return self.dft_size // 2 + 1

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop

    @classmethod
    def from_ms(cls, input_ms: float = 16, hop_ms: float = 2, output_ms: float | None = None,
                sample_rate: int = 16000, dft_size: int | None = None) -> "StftConfig":
        """Build from millisecond durations; ``output_ms`` defaults to twice the hop."""
        if output_ms is None:
            output_ms = 2 * hop_ms
        to_samples = lambda ms: int(round(ms * sample_rate / 1000))
        iws = to_samples(input_ms)
        return cls(sample_rate=sample_rate, input_window=iws, hop=to_samples(hop_ms),
                   output_window=to_samples(output_ms), dft_size=dft_size or iws)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    ``variant`` is ``"fsb"`` (each module = full-band block + sub-band block,
    ``num_modules`` modules) or ``"fb"`` (``fb_layers`` full-band blocks and no
    sub-band blocks).
    """

    num_modules: int = 3
    embed_dim: int = 32
    fb_channels: int = 8
    fb_kernel: int = 8
    fb_stride: int = 4
    fb_hidden: int = 256
    sb_channels: int = 64
    sb_kernel: int = 5
    sb_stride: int = 5
    sb_hidden: int = 64
    num_mics: int = 6
    variant: str = "fsb"
    fb_layers: int = 6
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self) -> None:
        ints = ("num_modules", "embed_dim", "fb_channels", "fb_kernel", "fb_stride", "fb_hidden",
                "sb_channels", "sb_kernel", "sb_stride", "sb_hidden", "num_mics", "fb_layers")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.variant not in ("fsb", "fb"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.fb_stride > self.fb_kernel or self.sb_stride > self.sb_kernel:
            raise ValueError("stride larger than kernel leaves frequency gaps")
        if self.n_bins < self.fb_kernel or self.n_bins < self.sb_kernel:
            raise ValueError("kernel wider than the spectrum")

    # derived shapes
    @property
    def n_bins(self) -> int:
        return self.stft.n_bins

    @property
    def fb_padded(self) -> int:
        return _padded_length(self.n_bins, self.fb_kernel, self.fb_stride)

    @property
    def fb_positions(self) -> int:
        return (self.fb_padded - self.fb_kernel) // self.fb_stride + 1

    @property
    def frame_embed_dim(self) -> int:
        """Flattened full-band frame embedding size (channels x positions)."""
        return self.fb_channels * self.fb_positions

    @property
    def sb_padded(self) -> int:
        return _padded_length(self.n_bins, self.sb_kernel, self.sb_stride)

    @property
    def num_subbands(self) -> int:
        return (self.sb_padded - self.sb_kernel) // self.sb_stride + 1

    def blocks(self) -> list[tuple[str, str]]:
        """(prefix, kind) for every block in execution order."""
        if self.variant == "fb":
            return [(f"block{i}.fb", "fb") for i in range(self.fb_layers)]
        out = []
        for i in range(self.num_modules):
            out += [(f"block{i}.fb", "fb"), (f"block{i}.sb", "sb")]
        return out

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "stft" in data and not isinstance(data["stft"], StftConfig):
            stft = dict(data["stft"])
            bad = set(stft) - {f.name for f in dataclasses.fields(StftConfig)}
            if bad:
                raise ValueError(f"unknown stft fields: {sorted(bad)}")
            data["stft"] = StftConfig(**stft)
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


def _padded_length(n: int, kernel: int, stride: int) -> int:
    return math.ceil((n - kernel) / stride) * stride + kernel


PRESETS = {
    "fsb-6ch": dict(variant="fsb", num_mics=6),
    "fsb-2ch": dict(variant="fsb", num_mics=2),
    "fsb-1ch": dict(variant="fsb", num_mics=1),
    "fb6-6ch": dict(variant="fb", fb_layers=6, num_mics=6),
    "fb9-6ch": dict(variant="fb", fb_layers=9, num_mics=6),
}


def preset(name: str, hop_ms: float | None = None) -> ModelConfig:
    """Named configuration; ``hop_ms`` rescales the hop with oWS = 2*HS and iWS fixed at 16 ms."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = ModelConfig(**PRESETS[name])
    if hop_ms is not None:
        cfg = cfg.replace(stft=StftConfig.from_ms(16, hop_ms))
    return cfg
