#!/usr/bin/env python3
"""
File format and command-line tests: MELF / RFW1 / WAV codecs, every
subcommand through ``main`` and the exit-code mapping.
"""

import sys
sys.path.insert(0, 'src')

import json
import os
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
import pytest
from scipy.io import wavfile

from ringformer.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, exit_code, main
from ringformer.dsp import Waveform
from ringformer.errors import ConfigError, DeviceError, FormatError, NumericError
from ringformer.formats import MEL_HEADER, read_mel, read_wav, write_mel, write_wav, write_weights, read_weights
from ringformer.generator import GeneratorConfig, build_generator

SR = 22050


def _write_random_mel(path, frames, n_mels=80, seed=0):
    values = np.random.default_rng(seed).normal(-5.0, 2.0, size=(n_mels, frames)).astype(np.float32)
    write_mel(path, values)
    return values


def _write_tone(path, n=SR, freq=220.0, amplitude=0.5, seed=0):
    t = np.arange(n) / SR
    noise = 0.02 * np.random.default_rng(seed).standard_normal(n)
    write_wav(path, Waveform(amplitude * np.sin(2 * np.pi * freq * t) + noise, SR))
    return path


def test_melf_codec():
    """Bitwise round trip; truncation, bad magic and NaN report byte offsets."""
    print("Testing MELF codec...")
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "a.melf"
        values = _write_random_mel(path, 13)
        assert path.stat().st_size == MEL_HEADER.size + 4 * 80 * 13
        assert np.array_equal(read_mel(path).values, values)

        data = path.read_bytes()
        (Path(tmp) / "short.melf").write_bytes(data[:-3])
        with pytest.raises(FormatError) as info:
            read_mel(Path(tmp) / "short.melf")
        assert info.value.offset == MEL_HEADER.size

        (Path(tmp) / "magic.melf").write_bytes(b"MELX" + data[4:])
        with pytest.raises(FormatError) as info:
            read_mel(Path(tmp) / "magic.melf")
        assert info.value.offset == 0

        bad = values.copy()
        bad.flat[5] = np.nan
        write_mel(Path(tmp) / "nan.melf", bad)
        with pytest.raises(FormatError) as info:
            read_mel(Path(tmp) / "nan.melf")
        assert info.value.offset == MEL_HEADER.size + 4 * 5
    print("✓ MELF codec\n")


def test_rfw1_codec():
    """Weights round trip; shape conflicts are config errors, damage is a format error."""
    print("Testing RFW1 codec...")
    with tempfile.TemporaryDirectory() as tmp:
        for cfg in (GeneratorConfig.desk(seed=5), GeneratorConfig.debug(seed=6)):
            weights = build_generator(cfg)
            path = write_weights(Path(tmp) / "w.rfw", weights)
            loaded = read_weights(path)
            assert loaded.config == cfg
            assert list(loaded.arrays) == list(weights.arrays)
            assert all(np.array_equal(loaded[k], weights[k]) for k in weights.arrays)

        data = path.read_bytes()
        for name, damaged in (("short", data[:-10]), ("tail", data + b"\x00"), ("magic", b"RFW2" + data[4:])):
            (Path(tmp) / f"{name}.rfw").write_bytes(damaged)
            with pytest.raises(FormatError):
                read_weights(Path(tmp) / f"{name}.rfw")

        mismatched = build_generator(GeneratorConfig.debug())
        mismatched.config = GeneratorConfig.debug(input_channels=64)
        write_weights(Path(tmp) / "mismatch.rfw", mismatched)
        with pytest.raises(ConfigError):
            read_weights(Path(tmp) / "mismatch.rfw")
    print("✓ RFW1 codec\n")


def test_wav_codec():
    """PCM16 round trip, clipping guard, stereo downmix and rate check."""
    print("Testing WAV codec...")
    with tempfile.TemporaryDirectory() as tmp:
        t = np.arange(SR) / SR
        tone = 0.5 * np.sin(2 * np.pi * 440 * t)
        write_wav(Path(tmp) / "tone.wav", Waveform(tone, SR))
        back = read_wav(Path(tmp) / "tone.wav")
        assert len(back) == SR and back.sample_rate == SR
        assert np.max(np.abs(back.samples - tone)) <= 0.5 / 32767 + 1e-6

        write_wav(Path(tmp) / "loud.wav", Waveform(4.0 * tone, SR))
        assert abs(np.max(np.abs(read_wav(Path(tmp) / "loud.wav").samples)) - 0.95) < 1e-3

        stereo = np.stack([np.full(100, 1000), np.full(100, 3000)], axis=1).astype(np.int16)
        wavfile.write(Path(tmp) / "stereo.wav", SR, stereo)
        with pytest.warns(UserWarning):
            mono = read_wav(Path(tmp) / "stereo.wav")
        assert np.allclose(mono.samples, 2000 / 32767)

        wavfile.write(Path(tmp) / "slow.wav", 16000, np.zeros(100, dtype=np.int16))
        with pytest.raises(FormatError):
            read_wav(Path(tmp) / "slow.wav")
        (Path(tmp) / "junk.wav").write_bytes(b"JUNK" + bytes(40))
        with pytest.raises(FormatError) as info:
            read_wav(Path(tmp) / "junk.wav")
        assert info.value.offset == 0
    print("✓ WAV codec\n")


def test_mel_command():
    """One second of audio gives 87 frames of 80 bins."""
    print("Testing mel command...")
    with tempfile.TemporaryDirectory() as tmp:
        wav = _write_tone(Path(tmp) / "in.wav")
        out = Path(tmp) / "out.melf"
        assert main(["mel", str(wav), str(out), "-q"]) == EXIT_OK
        assert read_mel(out).values.shape == (80, 87)
    print("✓ mel command\n")


def test_vocode_command():
    """Seeded vocoding is reproducible, saved weights reproduce the output, lengths follow 256·T."""
    print("Testing vocode command...")
    with tempfile.TemporaryDirectory() as tmp:
        mel = Path(tmp) / "in.melf"
        _write_random_mel(mel, 8)
        outs = [Path(tmp) / f"out{i}.wav" for i in range(3)]
        for out, seed in zip(outs, ("7", "7", "8")):
            assert main(["vocode", str(mel), str(out), "--preset", "debug", "--seed", seed, "-q"]) == EXIT_OK
        assert outs[0].read_bytes() == outs[1].read_bytes()
        assert outs[0].read_bytes() != outs[2].read_bytes()
        assert len(read_wav(outs[0])) == 8 * 256

        long_mel = Path(tmp) / "long.melf"
        _write_random_mel(long_mel, 32, seed=1)
        weights = Path(tmp) / "desk.rfw"
        first, second = Path(tmp) / "first.wav", Path(tmp) / "second.wav"
        assert main(["vocode", str(long_mel), str(first), "--preset", "desk", "--seed", "3",
                     "--save-weights", str(weights), "-q"]) == EXIT_OK
        assert main(["vocode", str(long_mel), str(second), "--weights", str(weights), "-q"]) == EXIT_OK
        assert len(read_wav(first)) == 8192
        assert first.read_bytes() == second.read_bytes()
    print("✓ vocode command\n")


def test_bench_command():
    """Ring rows record N_d·b², vanilla rows T²; blocks longer than T are skipped."""
    print("Testing bench command...")
    with tempfile.TemporaryDirectory() as tmp:
        csv = Path(tmp) / "bench.csv"
        assert main(["bench", str(csv), "--seq-lens", "256,512", "--block-lens", "64,128,1024",
                     "--head-dim", "8", "-q"]) == EXIT_OK
        table = pd.read_csv(csv)
        assert len(table) == 6
        ring = table[table["mode"] == "ring"]
        assert (ring["peak_score_elements"] == ring["seq_len"] * ring["block_len"]).all()
        vanilla = table[table["mode"] == "vanilla"]
        assert (vanilla["peak_score_elements"] == vanilla["seq_len"] ** 2).all()
        row = ring[(ring["seq_len"] == 512) & (ring["block_len"] == 64)].iloc[0]
        assert row["ratio"] == 0.125
        assert (table["median_ms"] > 0).all()
    print("✓ bench command\n")


def test_losses_and_metrics_commands():
    """Identical files zero the spectral terms; a sign flip maxes the phase term."""
    print("Testing losses and metrics commands...")
    with tempfile.TemporaryDirectory() as tmp:
        real = _write_tone(Path(tmp) / "real.wav", n=4096)
        flipped = Path(tmp) / "flipped.wav"
        write_wav(flipped, Waveform(-read_wav(real).samples, SR))
        report = Path(tmp) / "losses.json"

        assert main(["losses", str(real), str(real), str(report), "--discriminator", "mpd_desk", "-q"]) == EXIT_OK
        same = json.loads(report.read_text())
        assert same["l_mag"] == 0.0 and same["l_fm"] == 0.0

        assert main(["losses", str(real), str(flipped), str(report), "--discriminator", "mpd_desk",
                     "--recon", "0.1", "-q"]) == EXIT_OK
        flip = json.loads(report.read_text())
        assert abs(flip["l_phase"] - 2.0) < 1e-6
        assert abs(flip["l_total"] - (flip["l_g"] + 0.7 * flip["l_sd"] + flip["l_fm"] + 4.5)) < 1e-6

        ref = _write_tone(Path(tmp) / "ref.wav")
        metrics_json = Path(tmp) / "metrics.json"
        assert main(["metrics", str(ref), str(ref), str(metrics_json), "-q"]) == EXIT_OK
        result = json.loads(metrics_json.read_text())
        assert result["mcd_db"] == 0.0
        assert result["f0_pearson"] == pytest.approx(1.0, abs=1e-9)
    print("✓ losses and metrics commands\n")


def test_attn_map_command():
    """Global and windowed maps are written as row-stochastic CSVs, plus a PNG."""
    print("Testing attn-map command...")
    with tempfile.TemporaryDirectory() as tmp:
        mel = Path(tmp) / "in.melf"
        _write_random_mel(mel, 8)
        csv, png = Path(tmp) / "map.csv", Path(tmp) / "map.png"
        assert main(["attn-map", str(mel), str(csv), "--preset", "desk", "--window", "2",
                     "--png", str(png), "-q"]) == EXIT_OK
        for path in (csv, Path(tmp) / "map_window2.csv"):
            values = pd.read_csv(path, header=None).to_numpy()
            assert values.shape == (32, 32)
            assert np.allclose(values.sum(axis=1), 1.0, atol=1e-5)
        assert png.stat().st_size > 0
        assert main(["attn-map", str(mel), str(csv), "--preset", "debug", "-q"]) == EXIT_CONFIG
    print("✓ attn-map command\n")


def test_selftest_command():
    """Selected checks pass; a corrupted kernel makes the run fail with exit code 1."""
    print("Testing selftest command...")
    assert main(["selftest", "-q", "--only", "numeric kernels", "softmax stability", "loss identities"]) == EXIT_OK
    assert main(["selftest", "-q", "--corrupt", "online-softmax", "--only", "ring exactness"]) == EXIT_FAILED
    assert main(["selftest", "-q", "--corrupt", "conv1d", "--only", "numeric kernels"]) == EXIT_FAILED
    assert main(["selftest", "-q", "--only", "no such check"]) == EXIT_USAGE
    print("✓ selftest command\n")


def test_exit_codes():
    """Usage, I/O, config and numeric failures map to 2, 3, 4 and 5."""
    print("Testing exit codes...")
    with tempfile.TemporaryDirectory() as tmp:
        out = str(Path(tmp) / "out.wav")
        assert main([]) == EXIT_USAGE
        assert main(["frobnicate"]) == EXIT_USAGE
        assert main(["vocode", str(Path(tmp) / "missing.melf"), out, "--preset", "debug", "-q"]) == EXIT_IO

        narrow = Path(tmp) / "narrow.melf"
        _write_random_mel(narrow, 4, n_mels=40)
        assert main(["vocode", str(narrow), out, "--preset", "debug", "-q"]) == EXIT_CONFIG
        assert main(["vocode", str(narrow), out, "--preset", "nope", "-q"]) == EXIT_CONFIG
        truncated = Path(tmp) / "truncated.melf"
        truncated.write_bytes(narrow.read_bytes()[:20])
        assert main(["vocode", str(truncated), out, "--preset", "debug", "-q"]) == EXIT_IO
        assert main(["bench", str(Path(tmp) / "b.csv"), "--repeats", "2", "-q"]) == EXIT_CONFIG

        with mock.patch.dict(os.environ, {"RINGFORMER_WEIGHTS": str(Path(tmp) / "absent.rfw")}):
            assert main(["vocode", str(narrow), out, "-q"]) == EXIT_IO

    assert exit_code(DeviceError(2, RuntimeError("lost"))) == EXIT_NUMERIC
    assert exit_code(NumericError("stage 1 mrf")) == EXIT_NUMERIC
    with pytest.raises(KeyError):
        exit_code(KeyError("not an engine error"))
    print("✓ exit codes\n")


def main_tests():
    """Run all tests."""
    print("=" * 60)
    print("Formats and CLI Tests")
    print("=" * 60 + "\n")

    try:
        test_melf_codec()
        test_rfw1_codec()
        test_wav_codec()
        test_mel_command()
        test_vocode_command()
        test_bench_command()
        test_losses_and_metrics_commands()
        test_attn_map_command()
        test_selftest_command()
        test_exit_codes()

        print("=" * 60)
        print("ALL TESTS PASSED ✓")
        print("=" * 60)
        return 0
    except Exception as e:
        print("\n" + "=" * 60)
        print("TEST FAILED ✗")
        print("=" * 60)
        print(f"Error: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main_tests())
