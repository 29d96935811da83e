"""
Built-in invariant suite run by ``ringformer selftest``.

Each check raises AssertionError (or any engine error) on failure. A named
corruption swaps one kernel for a broken version while the suite runs, which
must make at least one check fail.
"""

import math
import time
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional
from unittest import mock

import numpy as np
from tqdm.auto import tqdm

from ringformer import adversarial, attention, dsp, generator, metrics, numeric
from ringformer.verbosity import VerbosityLevel

CHECKS: Dict[str, Callable[[], None]] = {}


def check(name: str):
    def register(fn):
        CHECKS[name] = fn
        return fn
    return register


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float
    detail: str = ""


@dataclass
class SelftestReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    def __str__(self) -> str:
        lines = [f"{'✓' if r.passed else '✗'} {r.name} ({r.seconds:.1f} s)" + (f": {r.detail}" if r.detail else "")
                 for r in self.results]
        verdict = "all checks passed" if self.passed else f"FAILED: {', '.join(self.failures)}"
        return "\n".join(lines + [verdict])


def _snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    noise = np.sum((reference - estimate) ** 2)
    if noise == 0:
        return math.inf
    return 10.0 * math.log10(np.sum(reference ** 2) / noise)


@lru_cache(maxsize=1)
def _base_weights() -> generator.GeneratorWeights:
    return generator.build_generator(generator.GeneratorConfig.base())


@check("numeric kernels")
def _check_numeric():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    expected = np.array([[sum(a[i, k] * b[k, j] for k in range(7)) for j in range(3)] for i in range(5)])
    assert np.allclose(numeric.matmul(a, b), expected, atol=1e-12), "matmul disagrees with the triple loop"

    x, w, bias = rng.standard_normal((3, 20)), rng.standard_normal((4, 3, 5)), rng.standard_normal(4)
    stride, padding, dilation = 2, 3, 2
    padded = np.pad(x, ((0, 0), (padding, padding)))
    l_out = (20 + 2 * padding - dilation * 4 - 1) // stride + 1
    direct = np.array([[bias[o] + sum(w[o, c, k] * padded[c, t * stride + k * dilation]
                                      for c in range(3) for k in range(5)) for t in range(l_out)]
                       for o in range(4)])
    got = numeric.conv1d(x, w, bias, stride=stride, padding=padding, dilation=dilation)
    assert np.allclose(got, direct, atol=1e-10), "conv1d disagrees with direct summation"

    wt = rng.standard_normal((3, 2, 8))
    scatter = np.zeros((2, (20 - 1) * 4 + 8))
    for c in range(3):
        for t in range(20):
            scatter[:, t * 4:t * 4 + 8] += x[c, t] * wt[c]
    got = numeric.conv_transpose1d(x, wt, stride=4, padding=2)
    assert got.shape == (2, 80), f"conv_transpose1d length {got.shape[1]}, expected 80"
    assert np.allclose(got, scatter[:, 2:82], atol=1e-10), "conv_transpose1d disagrees with scatter-add"


@check("softmax stability")
def _check_softmax():
    rows = np.array([[1000.0, 1000.0, 999.0], [-1000.0, -1001.0, -1002.0]], dtype=np.float32)
    out = numeric.softmax_rows(rows)
    assert np.all(np.isfinite(out)), "softmax overflowed"
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6), "softmax rows do not sum to 1"
    assert np.allclose(out[0], numeric.softmax_rows(rows[:1] - 1000.0)[0], atol=1e-6), "softmax not shift invariant"

    rng = np.random.default_rng(1)
    q = rng.standard_normal((2, 128, 8)) * 3000.0
    k, v = rng.standard_normal((2, 128, 8)), rng.standard_normal((2, 128, 8))
    cfg = attention.AttentionConfig(seq_len=128, block_len=32, num_heads=2, head_dim=8)
    ring = attention.ring_attention(q, k, v, cfg)
    vanilla = np.stack([attention.vanilla_attention(q[h], k[h], v[h]) for h in range(2)])
    err = float(np.max(np.abs(ring - vanilla)))
    assert err < 1e-8, f"ring attention at logits ~1e4 deviates by {err:.2e}"


RING_GRID = [(t, b) for t in (64, 512, 2048) for b in (32, 128, 512) if b <= t]
RING_SEEDS = 20


@check("ring exactness")
def _check_ring():
    for seq_len, block_len in RING_GRID:
        for heads in (1, 8):
            cfg = attention.AttentionConfig(seq_len=seq_len, block_len=block_len, num_heads=heads, head_dim=8)
            for seed in range(RING_SEEDS):
                rng = np.random.default_rng(seed)
                base = [rng.standard_normal((heads, seq_len, 8)) for _ in range(3)]
                for dtype, tol in ((np.float32, 1e-4), (np.float64, 1e-10)):
                    q, k, v = (t.astype(dtype) for t in base)
                    ring = attention.ring_attention(q, k, v, cfg)
                    vanilla = np.stack([attention.vanilla_attention(q[h], k[h], v[h]) for h in range(heads)])
                    err = float(np.max(np.abs(ring - vanilla)))
                    assert err < tol, (f"T={seq_len} b={block_len} heads={heads} seed={seed} "
                                       f"{np.dtype(dtype).name}: max error {err:.2e}")
    rng = np.random.default_rng(0)
    q, k, v = (rng.standard_normal((48, 16)).astype(np.float32) for _ in range(3))
    single = attention.AttentionConfig(seq_len=48, block_len=64, num_heads=1, head_dim=16)
    assert np.array_equal(attention.ring_attention(q, k, v, single), attention.vanilla_attention(q, k, v)), \
        "one-device ring is not bitwise equal to vanilla attention"


@check("memory law")
def _check_memory():
    rng = np.random.default_rng(2)
    for _ in range(10):
        seq_len = int(rng.integers(16, 400))
        block_len = int(rng.integers(8, 160))
        cfg = attention.AttentionConfig(seq_len=seq_len, block_len=block_len, num_heads=1, head_dim=8)
        q, k, v = (rng.standard_normal((seq_len, 8)).astype(np.float32) for _ in range(3))
        ring_tracker, vanilla_tracker = attention.ScoreBufferTracker(), attention.ScoreBufferTracker()
        attention.ring_attention(q, k, v, cfg, tracker=ring_tracker)
        attention.vanilla_attention(q, k, v, tracker=vanilla_tracker)
        b = cfg.effective_block_len
        assert ring_tracker.peak == cfg.num_devices * b * b, \
            f"T={seq_len} b={block_len}: ring peak {ring_tracker.peak} != {cfg.num_devices * b * b}"
        assert vanilla_tracker.peak == seq_len ** 2, f"T={seq_len}: vanilla peak {vanilla_tracker.peak}"
    big = attention.AttentionConfig(seq_len=4096, block_len=512)
    ratio = attention.peak_score_elements(big, "ring") / attention.peak_score_elements(big, "vanilla")
    assert ratio == 0.125, f"T=4096, b=512 ratio {ratio}"


@check("generator length law")
def _check_generator():
    weights = _base_weights()
    cfg = weights.config
    rng = np.random.default_rng(3)
    for frames in (1, 32, 87):
        mel = rng.normal(-5.0, 2.0, size=(cfg.n_mels, frames)).astype(np.float32)
        audio = generator.synthesize(mel, weights)
        assert len(audio) == 256 * frames, f"T={frames}: {len(audio)} samples, expected {256 * frames}"
        if frames == 32:
            again = generator.synthesize(mel, weights)
            assert np.array_equal(audio.samples, again.samples), "synthesis is not deterministic"
    extreme = np.where(rng.random((cfg.n_mels, 16)) < 0.5, -20.0, 20.0).astype(np.float32)
    audio = generator.synthesize(extreme, weights)
    assert np.all(np.isfinite(audio.samples)), "non-finite samples for |mel| = 20"


@check("istft round trip")
def _check_istft():
    rng = np.random.default_rng(4)
    for n_fft, hop in ((1024, 256), (64, 16)):
        for _ in range(100):
            x = rng.standard_normal(int(rng.integers(4 * n_fft, 8 * n_fft)))
            spec = dsp.stft(x, n_fft, hop)
            y = dsp.istft(spec, length=len(x)).samples
            snr = _snr_db(x, y)
            assert snr > 60.0, f"n_fft={n_fft} hop={hop}: SNR {snr:.1f} dB"


@check("loss identities")
def _check_losses():
    rng = np.random.default_rng(5)
    x = dsp.Waveform(rng.standard_normal(8192).astype(np.float32))
    neg = dsp.Waveform(-x.samples)
    assert adversarial.magnitude_loss(x, x) == 0.0, "l_mag(x, x) != 0"
    assert adversarial.phase_loss(x, x) < 1e-12, "l_phase(x, x) != 0"
    assert abs(adversarial.phase_loss(x, neg) - 2.0) < 1e-6, "l_phase(x, -x) != 2"
    mpd = adversarial.MultiPeriodDiscriminator(adversarial.MPDConfig.desk(seed=0))
    outputs = mpd(x)
    assert adversarial.feature_matching_loss(outputs, outputs) == 0.0, "l_fm(identical) != 0"
    half = adversarial.FamilyScores([np.full(10, 0.5)], [np.full(7, 0.5)])
    l_g, l_d = adversarial.adversarial_losses(half, half, half, alpha=0.5)
    assert abs(l_g - 0.25) < 1e-9 and abs(l_d - 0.5) < 1e-9, f"all-0.5 scores gave L_G={l_g}, L_D={l_d}"
    for name, expected in (("sd", 0.7), ("fm", 1.0), ("recon", 45.0), ("kl", 1.0), ("dur", 1.0)):
        components = {"adv": 0.0, "sd": 0.0, "fm": 0.0}
        external = {}
        if name in components:
            components[name] = 1.0
        else:
            external[name] = 1.0
        total, _ = adversarial.total_loss(components["adv"], components["sd"], components["fm"], external)
        assert total == expected, f"unit {name} gave total {total}, expected {expected}"


@check("metrics")
def _check_metrics():
    sr = 22050
    t = np.arange(sr) / sr
    sine = dsp.Waveform((0.5 * np.sin(2 * np.pi * 220.0 * t)).astype(np.float32), sr)
    assert metrics.mcd(sine, sine) == 0.0, "mcd(x, x) != 0"
    cep = metrics.mel_cepstrum(sine)
    shifted = metrics.mcd_from_cepstra(cep + 0.1, cep)
    expected = 10.0 / math.log(10.0) * 0.1 * math.sqrt(26.0)
    assert abs(shifted - expected) < 1e-3, f"cepstral offset 0.1 gave {shifted:.4f} dB, expected {expected:.4f}"
    contour = metrics.f0_contour(sine)
    cfg = metrics.F0Config()
    n, (_, lag_max) = cfg.frame_length(sr), cfg.lag_range(sr)
    interior = [i for i in range(len(contour)) if i * contour.hop + n + lag_max <= len(sine)]
    worst = float(np.max(np.abs(contour.values[interior] - 220.0)))
    assert worst <= 2.0, f"220 Hz sine tracked with error up to {worst:.2f} Hz"
    a = np.random.default_rng(6).standard_normal(50)
    assert abs(metrics.pearson(a, a) - 1.0) < 1e-12, "pearson(a, a) != 1"


@check("param count")
def _check_params():
    count = generator.param_count(_base_weights())
    assert 24_000_000 <= count <= 36_000_000, f"default generator has {count:,} parameters"


def _break_online_softmax():
    original = attention.blockwise_partial_update

    def skewed(*args, **kwargs):
        state = original(*args, **kwargs)
        return replace(state, denominator=state.denominator * 1.01)

    return [mock.patch.object(attention, "blockwise_partial_update", skewed)]


def _break_istft():
    original = dsp.istft

    def scaled(*args, **kwargs):
        w = original(*args, **kwargs)
        return dsp.Waveform(w.samples * np.float32(1.01), w.sample_rate)

    return [mock.patch.object(dsp, "istft", scaled), mock.patch.object(generator, "istft", scaled)]


def _break_conv1d():
    original = numeric.conv1d

    def offset(*args, **kwargs):
        return original(*args, **kwargs) + 1e-3

    return [mock.patch.object(numeric, "conv1d", offset)]


CORRUPTIONS = {
    "online-softmax": _break_online_softmax,
    "istft": _break_istft,
    "conv1d": _break_conv1d,
}


@contextmanager
def corrupted(name: Optional[str]):
    """Run the enclosed block with kernel ``name`` broken (no-op for None)."""
    if name is None:
        yield
        return
    if name not in CORRUPTIONS:
        raise KeyError(f"unknown corruption '{name}', choose from {sorted(CORRUPTIONS)}")
    with ExitStack() as stack:
        for patch in CORRUPTIONS[name]():
            stack.enter_context(patch)
        yield


def run_selftest(verbosity: VerbosityLevel = VerbosityLevel.BASIC,
                 corrupt: Optional[str] = None,
                 only: Optional[Iterable[str]] = None) -> SelftestReport:
    """Run every registered check (or those named in ``only``)."""
    names = list(only) if only is not None else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks {unknown}, choose from {list(CHECKS)}")
    report = SelftestReport()
    with corrupted(corrupt):
        for name in tqdm(names, desc="Self-test", disable=(verbosity == VerbosityLevel.QUIET)):
            start = time.perf_counter()
            try:
                CHECKS[name]()
                result = CheckResult(name, True, time.perf_counter() - start)
            except Exception as exc:
                result = CheckResult(name, False, time.perf_counter() - start, f"{type(exc).__name__}: {exc}")
            report.results.append(result)
            if verbosity >= VerbosityLevel.DETAILED:
                tqdm.write(str(SelftestReport([result])).splitlines()[0])
    if verbosity >= VerbosityLevel.BASIC:
        print(report)
    return report
