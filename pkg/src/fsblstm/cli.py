"""Command-line interface: enhance, analyze, selfcheck, init-weights, train-toy.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import checks, wavio
from . import weights as W
from .complexity import analyze
from .config import PRESETS, ModelConfig, preset
from .model import Enhancer, real_time_factor
from .train import DivergenceError, overfit_toy

EXIT_USAGE, EXIT_VALIDATION, EXIT_INVARIANT = 1, 2, 3


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        text = args.config
        if not text.lstrip().startswith("{"):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        try:
            cfg = ModelConfig.from_json(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}") from None
        if args.hop_ms is not None:
            raise ValidationError("--hop-ms applies to presets only; set stft.hop in the JSON config")
        return cfg
    return preset(args.preset, getattr(args, "hop_ms", None))


def cmd_enhance(args) -> int:
    store = W.load(args.weights)
    cfg = store.config
    wav = wavio.read(args.inp)
    if wav.sample_rate != cfg.stft.sample_rate:
        raise ValidationError(f"sample rate mismatch: file is {wav.sample_rate} Hz, "
                              f"model expects {cfg.stft.sample_rate} Hz")
    if wav.channels != cfg.num_mics:
        raise ValidationError(f"channel mismatch: file has {wav.channels}, model expects {cfg.num_mics}")
    x = wav.as_float()
    n = x.shape[1]
    chunk = cfg.stft.hop if args.chunk_ms is None else int(round(args.chunk_ms * wav.sample_rate / 1000))
    if chunk < 1:
        raise ValidationError("--chunk-ms must cover at least one sample")
    enh = Enhancer(store)
    parts = [enh.push(x[:, i:i + chunk]) for i in range(0, n, chunk)]
    parts.append(enh.flush())
    y = np.concatenate(parts)[:n]
    wavio.write(args.out, wavio.from_float(y, wav.sample_rate, wav.format_tag))

    times_ms = np.asarray(enh.frame_times) * 1e3
    print(f"samples={n}")
    print(f"frames={len(times_ms)}")
    print(f"chunk_samples={chunk}")
    print(f"rtf={real_time_factor(enh.frame_times, cfg):.4f}")
    print(f"frame_ms_mean={times_ms.mean():.4f}")
    print(f"frame_ms_p50={np.percentile(times_ms, 50):.4f}")
    print(f"frame_ms_p95={np.percentile(times_ms, 95):.4f}")
    print(f"frame_ms_max={times_ms.max():.4f}")
    print(f"hop_ms={1e3 * cfg.stft.hop / cfg.stft.sample_rate:g}")
    return 0


def cmd_analyze(args) -> int:
    report = analyze(_load_config(args))
    print(report.as_table())
    print()
    print(report.as_kv())
    return 0


def cmd_selfcheck(args) -> int:
    names = list(checks.SUITES) if args.suite == "all" else [args.suite]
    failed = []
    for name in names:
        for r in checks.SUITES[name]():
            print(f"[{name}] {r.line()}")
            if not r.ok:
                failed.append(r.name)
    if failed:
        print(f"selfcheck failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_INVARIANT
    print("selfcheck ok")
    return 0


def cmd_init_weights(args) -> int:
    store = W.init_random(_load_config(args), args.seed)
    W.save(store, args.out)
    print(f"params={store.num_params}")
    print(f"out={args.out}")
    return 0


def cmd_train_toy(args) -> int:
    run = overfit_toy(steps=args.steps, seed=args.seed, lr=args.lr)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(run.trace_csv() + "\n")
    if args.weights_out:
        W.save(run.weights, args.weights_out)
    print(f"steps={run.steps}")
    print(f"initial_loss={run.initial_loss:.8g}")
    print(f"final_loss={run.final_loss:.8g}")
    print(f"loss_reduction={run.reduction:.4f}")
    print(f"si_sdr_mixture_db={run.si_sdr_mixture:.3f}")
    print(f"si_sdr_before_db={run.si_sdr_before:.3f}")
    print(f"si_sdr_after_db={run.si_sdr_after:.3f}")
    return 0


def _add_config_args(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--config", help="JSON config file (or inline JSON object)")
    g.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--hop-ms", type=float, default=None, help="override the hop of a preset")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsblstm", description="Low-latency multi-channel speech enhancement.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("enhance", help="stream a WAV file through the model")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-ms", type=float, default=None, help="input chunk size (default: one hop)")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("analyze", help="parameter, MAC and buffer accounting")
    _add_config_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("selfcheck", help="run invariant suites")
    p.add_argument("--suite", choices=[*checks.SUITES, "all"], default="all")
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("init-weights", help="write randomly initialized weights")
    _add_config_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("train-toy", help="overfit a tiny model on one synthetic clip")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", required=True, help="loss trace (comma-separated)")
    p.add_argument("--weights-out", default=None)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValidationError, ValueError, OSError) as e:     # format errors subclass ValueError
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
