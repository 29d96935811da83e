"""
Objective evaluation: mel cepstral distortion, F0 contours and their Pearson correlation.
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.fft import dct

from ringformer.dsp import MelConfig, Waveform, mel_spectrogram
from ringformer.errors import ArgumentError, ConfigError, DegenerateInputError

MCD_COEFFS = 13
MCD_SCALE = 10.0 / math.log(10.0)


def mel_cepstrum(x: Waveform, cfg: Optional[MelConfig] = None, n_coeffs: int = MCD_COEFFS) -> np.ndarray:
    """Per-frame mel cepstra c₁..c_n (c₀ dropped), shape (frames, n_coeffs)."""
    cfg = cfg or MelConfig(sample_rate=x.sample_rate)
    log_mel = mel_spectrogram(x, cfg).values.astype(np.float64)
    if n_coeffs >= log_mel.shape[0]:
        raise ConfigError(f"{n_coeffs} cepstral coefficients need more than {log_mel.shape[0]} mel bins")
    cepstra = dct(log_mel, type=2, norm="ortho", axis=0)
    return np.ascontiguousarray(cepstra[1:n_coeffs + 1].T)


def mcd_from_cepstra(c: np.ndarray, c_ref: np.ndarray) -> float:
    """Mean over frames of (10/ln 10)·√(2·Σ_d (c_d − c'_d)²), in dB."""
    if c.shape != c_ref.shape:
        raise ArgumentError(f"cepstra shapes differ: {c.shape} vs {c_ref.shape}")
    if c.shape[0] == 0:
        raise DegenerateInputError("mel cepstral distortion needs at least one frame")
    diff = np.asarray(c, dtype=np.float64) - np.asarray(c_ref, dtype=np.float64)
    per_frame = MCD_SCALE * np.sqrt(2.0 * np.sum(diff ** 2, axis=1))
    return float(np.mean(per_frame))


def mcd(x: Waveform, y: Waveform, cfg: Optional[MelConfig] = None) -> float:
    """Frame-aligned mel cepstral distortion (no time warping)."""
    if len(x) != len(y):
        raise ArgumentError(f"waveform lengths differ: {len(x)} vs {len(y)} samples (trim first)")
    return mcd_from_cepstra(mel_cepstrum(x, cfg), mel_cepstrum(y, cfg))


@dataclass
class F0Config:
    """Autocorrelation pitch tracker settings."""
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    f_min: float = 50.0
    f_max: float = 500.0
    voicing_threshold: float = 0.3
    rms_floor: float = 1e-4
    octave_tolerance: float = 0.9   # first peak within this fraction of the best wins

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ConfigError(f"F0 search band needs 0 < f_min < f_max, got {self.f_min}, {self.f_max}")
        if self.frame_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("frame_ms and hop_ms must be positive")
        if not 0 < self.octave_tolerance <= 1:
            raise ConfigError(f"octave_tolerance must be in (0, 1], got {self.octave_tolerance}")

    def frame_length(self, sample_rate: int) -> int:
        return max(1, round(sample_rate * self.frame_ms / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return max(1, round(sample_rate * self.hop_ms / 1000.0))

    def lag_range(self, sample_rate: int):
        return int(math.floor(sample_rate / self.f_max)), int(math.ceil(sample_rate / self.f_min))

    def __str__(self) -> str:
        return (f"F0Config: {self.frame_ms:g} ms frames, {self.hop_ms:g} ms hop, "
                f"{self.f_min:g}-{self.f_max:g} Hz, voicing {self.voicing_threshold}")


@dataclass
class F0Contour:
    """Per-frame F0 in Hz; 0 marks unvoiced frames."""
    values: np.ndarray
    hop: int
    sample_rate: int = 22050

    @property
    def voiced(self) -> np.ndarray:
        return self.values > 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.hop / self.sample_rate

    def __len__(self) -> int:
        return len(self.values)


def _frame_f0(r: np.ndarray, lag_min: int, lag_max: int, sample_rate: int, cfg: F0Config) -> float:
    band = r[lag_min:lag_max + 1]
    best = band.max()
    if best < cfg.voicing_threshold:
        return 0.0
    lag = lag_min + int(np.argmax(band))
    for tau in range(lag_min, lag_max + 1):
        left = r[tau - 1] if tau > 0 else -np.inf
        right = r[tau + 1] if tau + 1 < len(r) else -np.inf
        if r[tau] >= cfg.octave_tolerance * best and r[tau] >= left and r[tau] >= right:
            lag = tau
            break
    delta = 0.0
    if 0 < lag < len(r) - 1:
        denom = r[lag - 1] - 2.0 * r[lag] + r[lag + 1]
        if denom < 0:
            delta = float(np.clip(0.5 * (r[lag - 1] - r[lag + 1]) / denom, -0.5, 0.5))
    f0 = sample_rate / (lag + delta)
    return f0 if cfg.f_min <= f0 <= cfg.f_max else 0.0


def f0_contour(x: Waveform, frame_ms: Optional[float] = None, hop_ms: Optional[float] = None,
               cfg: Optional[F0Config] = None) -> F0Contour:
    """
    Normalized cross-correlation F0 tracker.

    Each frame is correlated with its lagged copy over lags covering
    f_min..f_max; the first peak within ``octave_tolerance`` of the best one
    is refined by parabolic interpolation. Frames below the voicing threshold
    or the RMS floor are unvoiced.
    """
    cfg = cfg or F0Config()
    if frame_ms is not None or hop_ms is not None:
        cfg = F0Config(**{**asdict(cfg), **{k: v for k, v in (("frame_ms", frame_ms), ("hop_ms", hop_ms))
                                             if v is not None}})
    sr = x.sample_rate
    n, hop = cfg.frame_length(sr), cfg.hop_length(sr)
    lag_min, lag_max = cfg.lag_range(sr)
    samples = x.samples.astype(np.float64)
    n_frames = len(samples) // hop + 1 if len(samples) else 0
    padded = np.pad(samples, (0, lag_max + n))

    values = np.zeros(n_frames)
    for i in range(n_frames):
        start = i * hop
        frame = padded[start:start + n]
        if np.sqrt(np.mean(frame ** 2)) < cfg.rms_floor:
            continue
        segment = padded[start:start + n + lag_max]
        cross = np.correlate(segment, frame, mode="valid")
        energy = np.concatenate(([0.0], np.cumsum(segment ** 2)))
        lagged = energy[n:n + lag_max + 1] - energy[:lag_max + 1]
        denom = np.sqrt(energy[n] * np.maximum(lagged, 0.0))
        r = np.divide(cross, denom, out=np.zeros_like(cross), where=denom > 1e-12)
        values[i] = _frame_f0(r, lag_min, lag_max, sr, cfg)
    return F0Contour(values=values, hop=hop, sample_rate=sr)


def pearson(a: Union[F0Contour, Sequence[float], np.ndarray],
            b: Union[F0Contour, Sequence[float], np.ndarray]) -> float:
    """Sample correlation; F0 contours are compared over jointly voiced frames only."""
    if isinstance(a, F0Contour) and isinstance(b, F0Contour):
        if len(a) != len(b):
            raise ArgumentError(f"contours have {len(a)} and {len(b)} frames")
        joint = a.voiced & b.voiced
        a, b = a.values[joint], b.values[joint]
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ArgumentError(f"sequences have {a.size} and {b.size} points")
    if a.size < 2:
        raise DegenerateInputError(f"correlation needs at least 2 points, got {a.size}")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise DegenerateInputError("correlation undefined for a constant sequence")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


@dataclass
class MetricReport:
    mcd_db: float
    f0_pearson: Optional[float]
    voiced_frames: int
    total_frames: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def evaluate_metrics(ref: Waveform, hyp: Waveform, f0_cfg: Optional[F0Config] = None) -> MetricReport:
    """MCD plus F0 correlation of two equal-length recordings.

    A degenerate correlation is reported as 1.0 when both contours are
    identical and voiced somewhere, else as None.
    """
    distortion = mcd(ref, hyp, MelConfig(sample_rate=ref.sample_rate))
    f0_ref, f0_hyp = f0_contour(ref, cfg=f0_cfg), f0_contour(hyp, cfg=f0_cfg)
    joint = int(np.sum(f0_ref.voiced & f0_hyp.voiced))
    try:
        correlation = pearson(f0_ref, f0_hyp)
    except DegenerateInputError:
        identical = joint > 0 and np.array_equal(f0_ref.values, f0_hyp.values)
        correlation = 1.0 if identical else None
    return MetricReport(mcd_db=distortion, f0_pearson=correlation, voiced_frames=joint,
                        total_frames=len(f0_ref))
