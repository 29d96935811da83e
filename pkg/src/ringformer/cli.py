"""
Command-line entry point: ``ringformer <command> ...``.

Exit codes: 0 success, 1 failed self-test, 2 usage, 3 file or format error,
4 config/shape/argument error, 5 numeric or ring failure.
"""

import argparse
import statistics
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from ringformer.adversarial import LossReport, LossWeights, MPDConfig, MultiPeriodDiscriminator, evaluate_losses
from ringformer.attention import AttentionConfig, ScoreBufferTracker, plot_attention_map, ring_attention, vanilla_attention
from ringformer.dsp import MelConfig, MelSpectrogram, Waveform, mel_spectrogram
from ringformer.errors import (ArgumentError, ConfigError, DegenerateInputError, DeviceError, DimensionError,
                               NumericError, ProtocolError)
from ringformer.formats import read_mel, read_wav, write_mel, write_wav, write_weights
from ringformer.generator import GeneratorConfig, Vocoder, benchmark_synthesis
from ringformer.metrics import MetricReport, evaluate_metrics
from ringformer.resources import load_generator, resolve_config_path
from ringformer.selftest import CHECKS, CORRUPTIONS, run_selftest
from ringformer.verbosity import VerbosityLevel

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5

BENCH_COLUMNS = ["seq_len", "block_len", "mode", "median_ms", "peak_score_elements", "realtime_factor", "ratio"]
# Attention tokens run at the post-upsampling rate, one per istft hop.
TOKEN_HOP = 16


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ConfigError, DimensionError, ArgumentError, DegenerateInputError)):
        return EXIT_CONFIG
    if isinstance(exc, (NumericError, ProtocolError, DeviceError)):
        return EXIT_NUMERIC
    raise exc


def _generator_config(config_path: Optional[str], preset: str) -> GeneratorConfig:
    path = resolve_config_path(config_path)
    return GeneratorConfig.from_json(path) if path else GeneratorConfig.preset(preset)


def _load_input_mel(path: str, cfg: GeneratorConfig) -> MelSpectrogram:
    if Path(path).suffix.lower() == ".wav":
        return mel_spectrogram(read_wav(path, cfg.sample_rate), MelConfig.for_generator(cfg))
    return read_mel(path, sample_rate=cfg.sample_rate, hop=cfg.mel_hop)


def _paired_waves(first: str, second: str) -> Tuple[Waveform, Waveform]:
    a, b = read_wav(first), read_wav(second)
    length = min(len(a), len(b))
    if length == 0:
        raise ArgumentError(f"no audio to compare: {first} has {len(a)} samples, {second} has {len(b)}")
    return a.trimmed(length), b.trimmed(length)


def cmd_mel(input_wav: str, output_melf: str, config_path: Optional[str] = None, preset: str = "base",
            verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> MelSpectrogram:
    """WAV → MELF on the generator's mel grid."""
    cfg = _generator_config(config_path, preset)
    mel = mel_spectrogram(read_wav(input_wav, cfg.sample_rate), MelConfig.for_generator(cfg))
    write_mel(output_melf, mel)
    if verbosity >= VerbosityLevel.BASIC:
        print(f"F={mel.n_mels} T={mel.frames}")
    return mel


def cmd_vocode(input_path: str, output_wav: str,
               weights_path: Optional[str] = None,
               seed: Optional[int] = None,
               devices: Optional[int] = None,
               config_path: Optional[str] = None,
               preset: str = "base",
               save_weights: Optional[str] = None,
               verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> Waveform:
    """Mel (MELF, or WAV analysed first) → PCM16 WAV."""
    weights = load_generator(weights_path, config_path, preset=preset, seed=seed, num_devices=devices)
    if save_weights:
        write_weights(save_weights, weights)
    mel = _load_input_mel(input_path, weights.config)
    vocoder = Vocoder(weights=weights, verbosity=verbosity)
    audio = vocoder.synthesize(mel)
    write_wav(output_wav, audio)
    if verbosity >= VerbosityLevel.BASIC:
        print(f"Wrote {len(audio)} samples ({audio.duration:.2f} s) to {output_wav}")
    return audio


def _time_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times) * 1e3


def cmd_bench(output_csv: str, seq_lens: Sequence[int], block_lens: Sequence[int], repeats: int = 3,
              heads: int = 1, head_dim: int = 64, seed: int = 0,
              verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> pd.DataFrame:
    """Ring vs vanilla attention timings and instrumented score-buffer peaks."""
    if repeats < 3:
        raise ArgumentError(f"--repeats must be >= 3 for a median, got {repeats}")
    rng = np.random.default_rng(seed)
    rows = []
    for seq_len in tqdm(seq_lens, desc="Benchmarking", disable=(verbosity == VerbosityLevel.QUIET)):
        q, k, v = (rng.standard_normal((heads, seq_len, head_dim)).astype(np.float32) for _ in range(3))
        audio_seconds = TOKEN_HOP * seq_len / 22050.0

        def add_row(block_len, mode, median_ms, peak):
            rows.append({"seq_len": seq_len, "block_len": block_len, "mode": mode,
                         "median_ms": median_ms, "peak_score_elements": peak,
                         "realtime_factor": audio_seconds / (median_ms / 1e3),
                         "ratio": peak / seq_len ** 2})

        for block_len in block_lens:
            if block_len > seq_len:
                continue
            cfg = AttentionConfig(seq_len=seq_len, block_len=block_len, num_heads=heads, head_dim=head_dim)
            tracker = ScoreBufferTracker()
            ms = _time_ms(lambda: ring_attention(q, k, v, cfg, tracker=tracker), repeats)
            add_row(block_len, "ring", ms, tracker.peak)
        tracker = ScoreBufferTracker()
        ms = _time_ms(lambda: [vanilla_attention(q[h], k[h], v[h], tracker=tracker) for h in range(heads)], repeats)
        add_row(seq_len, "vanilla", ms, tracker.peak)

    table = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    table.to_csv(output_csv, index=False)
    if verbosity >= VerbosityLevel.BASIC:
        print(table.to_string(index=False))
    return table


def cmd_losses(real_wav: str, fake_wav: str, report_json: str, seed: int = 0, discriminator: str = "mpd",
               weights: Optional[LossWeights] = None, external: Optional[dict] = None,
               verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> LossReport:
    """Loss report of ``fake`` against ``real`` with two seeded discriminator families."""
    real, fake = _paired_waves(real_wav, fake_wav)
    theta = MultiPeriodDiscriminator(MPDConfig.preset(discriminator, seed=seed))
    psi = MultiPeriodDiscriminator(MPDConfig.preset(discriminator, seed=seed + 1))
    report = evaluate_losses(real, fake, theta, psi, weights, external)
    text = report.to_json(report_json)
    if verbosity >= VerbosityLevel.BASIC:
        print(text)
    return report


def cmd_metrics(ref_wav: str, hyp_wav: str, report_json: str,
                verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> MetricReport:
    ref, hyp = _paired_waves(ref_wav, hyp_wav)
    report = evaluate_metrics(ref, hyp)
    text = report.to_json(report_json)
    if verbosity >= VerbosityLevel.BASIC:
        print(text)
    return report


def cmd_selftest(corrupt: Optional[str] = None, only: Optional[List[str]] = None,
                 verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> int:
    report = run_selftest(verbosity=verbosity, corrupt=corrupt, only=only)
    if not report.passed:
        print(f"self-test failed: {', '.join(report.failures)}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_attn_map(input_path: str, output_csv: str, png: Optional[str] = None,
                 weights_path: Optional[str] = None, seed: Optional[int] = None,
                 config_path: Optional[str] = None, preset: str = "base",
                 stage: int = 0, block: int = 0, layer: int = 0, head: int = 0,
                 segment: int = 32, window: Optional[int] = None, window_block_len: int = 8,
                 verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> dict:
    """Export one Conformer head's attention map over the first ``segment`` tokens."""
    weights = load_generator(weights_path, config_path, preset=preset, seed=seed)
    mel = _load_input_mel(input_path, weights.config)
    vocoder = Vocoder(weights=weights, verbosity=VerbosityLevel.QUIET)
    maps = vocoder.attention_maps(mel, stage=stage, block=block, layer=layer, head=head,
                                  segment=segment, window=window, window_block_len=window_block_len)
    output = Path(output_csv)
    written = []
    for name, values in maps.items():
        path = output if name == "global" else output.with_name(f"{output.stem}_window{window}{output.suffix}")
        float_format = "%.9g" if values.dtype == np.float32 else "%.17g"
        pd.DataFrame(values).to_csv(path, header=False, index=False, float_format=float_format)
        written.append(path)
    if png:
        plot_attention_map(maps, png, title=f"stage {stage} block {block} layer {layer} head {head}")
        written.append(Path(png))
    if verbosity >= VerbosityLevel.BASIC:
        for path in written:
            print(f"Wrote {path}")
    return maps


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got '{text}'")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more output (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="no output")

    generator_opts = argparse.ArgumentParser(add_help=False)
    generator_opts.add_argument("--weights", help="RFW1 weight file (default: $RINGFORMER_WEIGHTS)")
    generator_opts.add_argument("--seed", type=int, help="initialization seed when no weight file is used")
    generator_opts.add_argument("--config", help="JSON generator config (default: $RINGFORMER_CONFIG)")
    generator_opts.add_argument("--preset", default="base", help="config preset when no config file is given")

    parser = argparse.ArgumentParser(prog="ringformer", description="RingFormer vocoder inference and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mel", parents=[common], help="WAV to MELF mel spectrogram")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--config")
    p.add_argument("--preset", default="base")

    p = sub.add_parser("vocode", parents=[common, generator_opts], help="mel (MELF or WAV) to WAV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--devices", type=int, help="ring devices per attention call")
    p.add_argument("--save-weights", help="also write the weights used as RFW1")

    p = sub.add_parser("bench", parents=[common], help="ring vs vanilla attention benchmark")
    p.add_argument("output")
    p.add_argument("--seq-lens", type=_int_list, default=[512, 2048, 4096])
    p.add_argument("--block-lens", type=_int_list, default=[128, 512])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--head-dim", type=int, default=64)
    p.add_argument("--frames", type=int, help="also time full synthesis of this many mel frames")
    p.add_argument("--preset", default="base")

    p = sub.add_parser("losses", parents=[common], help="loss report of fake vs real audio")
    p.add_argument("real")
    p.add_argument("fake")
    p.add_argument("report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--discriminator", default="mpd", choices=["mpd", "mpd_desk"])
    p.add_argument("--alpha", type=float, default=0.5)
    for term in ("recon", "kl", "dur"):
        p.add_argument(f"--{term}", type=float, default=0.0, help=f"externally computed L_{term}")

    p = sub.add_parser("metrics", parents=[common], help="MCD and F0 correlation of two recordings")
    p.add_argument("ref")
    p.add_argument("hyp")
    p.add_argument("report")

    p = sub.add_parser("selftest", parents=[common], help="run the built-in invariant suite")
    p.add_argument("--only", nargs="+", choices=list(CHECKS), metavar="CHECK")
    p.add_argument("--corrupt", choices=sorted(CORRUPTIONS), help=argparse.SUPPRESS)

    p = sub.add_parser("attn-map", parents=[common, generator_opts], help="export a Conformer attention map")
    p.add_argument("input")
    p.add_argument("output", help="CSV path of the global map")
    p.add_argument("--png")
    p.add_argument("--stage", type=int, default=0)
    p.add_argument("--block", type=int, default=0)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--segment", type=int, default=32)
    p.add_argument("--window", type=int, help="also export the map seen after this many ring rotations")
    p.add_argument("--window-block", type=int, default=8)
    return parser


def _run(args: argparse.Namespace, verbosity: VerbosityLevel) -> int:
    if args.command == "mel":
        cmd_mel(args.input, args.output, args.config, args.preset, verbosity)
    elif args.command == "vocode":
        cmd_vocode(args.input, args.output, args.weights, args.seed, args.devices, args.config, args.preset,
                   args.save_weights, verbosity)
    elif args.command == "bench":
        cmd_bench(args.output, args.seq_lens, args.block_lens, args.repeats, args.heads, args.head_dim,
                  verbosity=verbosity)
        if args.frames:
            benchmark_synthesis(GeneratorConfig.preset(args.preset), args.frames, args.repeats, verbosity)
    elif args.command == "losses":
        weights = LossWeights(alpha=args.alpha)
        external = {"recon": args.recon, "kl": args.kl, "dur": args.dur}
        cmd_losses(args.real, args.fake, args.report, args.seed, args.discriminator, weights, external, verbosity)
    elif args.command == "metrics":
        cmd_metrics(args.ref, args.hyp, args.report, verbosity)
    elif args.command == "selftest":
        return cmd_selftest(args.corrupt, args.only, verbosity)
    elif args.command == "attn-map":
        cmd_attn_map(args.input, args.output, args.png, args.weights, args.seed, args.config, args.preset,
                     args.stage, args.block, args.layer, args.head, args.segment, args.window,
                     args.window_block, verbosity)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    verbosity = VerbosityLevel.from_flags(args.verbose, args.quiet)
    try:
        return _run(args, verbosity)
    except Exception as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
