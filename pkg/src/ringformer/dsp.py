"""
Spectral analysis and synthesis: STFT, iSTFT, Hann windows and the HTK mel
filterbank feeding the generator.
"""

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import librosa
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import check_COLA, get_window

from ringformer.errors import ArgumentError, ConfigError, DimensionError
from ringformer.numeric import as_tensor, check_finite

# Analysis grid of the spectral losses; matches the mel hop.
LOSS_N_FFT = 1024
LOSS_HOP = 256
# Bins quieter than this are treated as having no defined phase.
PHASE_EPS = 1e-8


@dataclass
class Waveform:
    """Mono audio samples with their rate in Hz."""
    samples: np.ndarray
    sample_rate: int = 22050

    def __post_init__(self):
        self.samples = as_tensor(self.samples)
        if self.samples.ndim != 1:
            raise DimensionError(f"waveform samples must be 1-D, got shape {self.samples.shape}")
        check_finite(self.samples, "waveform")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def trimmed(self, length: int) -> 'Waveform':
        return Waveform(self.samples[:length], self.sample_rate)


@dataclass
class ComplexSpectrogram:
    """Polar STFT coefficients, bins × frames."""
    magnitude: np.ndarray
    phase: np.ndarray
    n_fft: int
    hop: int
    window: str = "hann"

    def __post_init__(self):
        if self.magnitude.shape != self.phase.shape or self.magnitude.ndim != 2:
            raise DimensionError(f"magnitude {self.magnitude.shape} and phase {self.phase.shape} "
                                 f"must be matching bins×frames matrices")
        if self.magnitude.shape[0] != self.n_fft // 2 + 1:
            raise DimensionError(f"expected {self.n_fft // 2 + 1} bins for n_fft={self.n_fft}, "
                                 f"got {self.magnitude.shape[0]}")
        if np.any(self.magnitude < 0):
            raise ArgumentError("spectrogram magnitude must be nonnegative")

    @property
    def frames(self) -> int:
        return self.magnitude.shape[1]

    @property
    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


@dataclass
class MelSpectrogram:
    """Log-amplitude mel spectrogram, mel bins × frames."""
    values: np.ndarray
    sample_rate: int = 22050
    hop: int = 256

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.ndim != 2:
            raise DimensionError(f"mel spectrogram must be F×T, got shape {self.values.shape}")
        check_finite(self.values, "mel spectrogram")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MelConfig:
    """Mel analysis settings (LJSpeech conventions by default)."""
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-5

    @classmethod
    def ljspeech(cls) -> 'MelConfig':
        return cls()

    @classmethod
    def loss_stft(cls) -> 'MelConfig':
        """Analysis grid of the spectral losses (1024-point Hann, hop 256)."""
        return cls(n_fft=LOSS_N_FFT, hop=LOSS_HOP)

    @classmethod
    def for_generator(cls, generator_config) -> 'MelConfig':
        """Mel grid matching a generator's input contract."""
        return cls(sample_rate=generator_config.sample_rate,
                   hop=generator_config.mel_hop,
                   n_mels=generator_config.n_mels)

    def __str__(self) -> str:
        return (f"MelConfig: {self.n_mels} mels, n_fft {self.n_fft}, hop {self.hop}, "
                f"{self.f_min:g}-{self.f_max:g} Hz @ {self.sample_rate} Hz")


def _check_fft_params(n_fft: int, hop: int):
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    if hop < 1 or hop > n_fft:
        raise ConfigError(f"hop must be in [1, n_fft={n_fft}], got {hop}")


@lru_cache(maxsize=None)
def hann_window(n_fft: int) -> np.ndarray:
    """Periodic Hann window of length ``n_fft``."""
    window = get_window("hann", n_fft, fftbins=True)
    window.setflags(write=False)
    return window


@lru_cache(maxsize=None)
def check_synthesis(n_fft: int, hop: int):
    """Raise ConfigError unless a Hann window at this hop is overlap-add invertible."""
    _check_fft_params(n_fft, hop)
    if not check_COLA(hann_window(n_fft), n_fft, n_fft - hop):
        raise ConfigError(f"Hann window with n_fft={n_fft}, hop={hop} violates the COLA condition")


def stft(x: Union[Waveform, np.ndarray], n_fft: int = LOSS_N_FFT, hop: int = LOSS_HOP,
         window: str = "hann") -> ComplexSpectrogram:
    """
    Short-time Fourier transform with reflect center padding of ``n_fft/2``.

    Returns ``floor(L/hop) + 1`` frames of ``n_fft/2 + 1`` bins.
    """
    _check_fft_params(n_fft, hop)
    if window != "hann":
        raise ConfigError(f"unsupported window '{window}'")
    samples = x.samples if isinstance(x, Waveform) else as_tensor(x)
    if samples.ndim != 1 or samples.shape[0] == 0:
        raise ArgumentError(f"stft needs a non-empty 1-D signal, got shape {samples.shape}")

    n_frames = samples.shape[0] // hop + 1
    padded = np.pad(samples, n_fft // 2, mode="reflect")
    frames = sliding_window_view(padded, n_fft)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * hann_window(n_fft), axis=-1).T
    dtype = samples.dtype
    return ComplexSpectrogram(magnitude=np.abs(spectrum).astype(dtype),
                              phase=np.angle(spectrum).astype(dtype),
                              n_fft=n_fft, hop=hop, window=window)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """Sum (F, n_fft) frames placed ``hop`` apart."""
    n_frames, n_fft = frames.shape
    chunks = -(-n_fft // hop)
    if chunks * hop != n_fft:
        frames = np.pad(frames, ((0, 0), (0, chunks * hop - n_fft)))
    frames = frames.reshape(n_frames, chunks, hop)
    out = np.zeros((n_frames + chunks - 1) * hop, dtype=frames.dtype)
    for j in range(chunks):
        out[j * hop:(j + n_frames) * hop] += frames[:, j, :].reshape(-1)
    return out


def istft(s: ComplexSpectrogram, length: Optional[int] = None) -> Waveform:
    """
    Inverse STFT by windowed overlap-add with squared-window normalization.

    The center padding is removed; the default output length is
    ``hop·(frames − 1)``. ``length`` trims or zero-extends to an exact size.
    """
    check_synthesis(s.n_fft, s.hop)
    window = hann_window(s.n_fft)
    dtype = s.magnitude.dtype
    frames = np.fft.irfft(s.complex.T, n=s.n_fft, axis=-1) * window
    signal = _overlap_add(frames, s.hop)
    envelope = _overlap_add(np.broadcast_to(window ** 2, frames.shape), s.hop)
    nonzero = envelope > 1e-8
    signal[nonzero] /= envelope[nonzero]

    signal = signal[s.n_fft // 2:]
    if length is None:
        length = s.hop * (s.frames - 1)
    if length < 0:
        raise ArgumentError(f"istft length must be nonnegative, got {length}")
    if signal.shape[0] >= length:
        signal = signal[:length]
    else:
        signal = np.pad(signal, (0, length - signal.shape[0]))
    return Waveform(signal.astype(dtype))


def hz_to_mel(frequency):
    """HTK mel scale, 2595·log10(1 + f/700)."""
    return librosa.hz_to_mel(frequency, htk=True)


@lru_cache(maxsize=32)
def mel_filterbank(sr: int = 22050, n_fft: int = 1024, n_mels: int = 80,
                   f_min: float = 0.0, f_max: float = 8000.0) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft/2 + 1), unnormalized."""
    if not 0 <= f_min < f_max <= sr / 2:
        raise ConfigError(f"mel band needs 0 <= f_min < f_max <= sr/2, got f_min={f_min}, "
                          f"f_max={f_max}, sr={sr}")
    if n_mels < 1:
        raise ConfigError(f"n_mels must be positive, got {n_mels}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bank = librosa.filters.mel(sr=sr, n_fft=n_fft, n_mels=n_mels, fmin=f_min, fmax=f_max,
                                   htk=True, norm=None, dtype=np.float64)
    empty = np.flatnonzero(bank.max(axis=1) <= 0)
    if empty.size:
        raise ConfigError(f"mel filters {empty.tolist()} are empty for n_fft={n_fft}, n_mels={n_mels}, "
                          f"band {f_min}-{f_max} Hz; lower n_mels or raise n_fft")
    bank.setflags(write=False)
    return bank


def mel_spectrogram(x: Waveform, cfg: Optional[MelConfig] = None) -> MelSpectrogram:
    """``log(max(filterbank · |STFT|, floor))`` on the configured grid."""
    cfg = cfg or MelConfig()
    spec = stft(x, cfg.n_fft, cfg.hop)
    bank = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)
    energy = bank @ spec.magnitude.astype(np.float64)
    values = np.log(np.maximum(energy, cfg.log_floor))
    return MelSpectrogram(values.astype(spec.magnitude.dtype), sample_rate=cfg.sample_rate, hop=cfg.hop)
