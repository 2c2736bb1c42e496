"""Low-latency multi-channel speech enhancement with full-band and sub-band LSTMs."""

from .autodiff import Tape, Var
from .complexity import ComplexityReport, analyze, buffer_bytes, count_macs, count_params
from .config import PRESETS, ModelConfig, StftConfig, preset
from .model import (Enhancer, StreamState, enhance_offline, enhance_stream, forward_offline,
                    mixture_ri, step_online)
from .stft import StreamingStft, offline_istft, offline_stft
from .train import overfit_toy, si_sdr, wav_mag_loss
from .weights import WeightFormatError, WeightStore, init_random, load, save

__all__ = [
    "Tape", "Var", "ComplexityReport", "analyze", "buffer_bytes", "count_macs", "count_params",
    "PRESETS", "ModelConfig", "StftConfig", "preset", "Enhancer", "StreamState", "enhance_offline",
    "enhance_stream", "forward_offline", "mixture_ri", "step_online", "StreamingStft",
    "offline_istft", "offline_stft", "overfit_toy", "si_sdr", "wav_mag_loss",
    "WeightFormatError", "WeightStore", "init_random", "load", "save",
]
