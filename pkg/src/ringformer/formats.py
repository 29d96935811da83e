"""
Binary file formats: MELF mel spectrograms, RFW1 generator weights, PCM16 WAV.

All multi-byte integers are unsigned 32-bit little-endian and all payload
floats are 32-bit little-endian. Malformed files raise
:class:`~ringformer.errors.FormatError` with the byte offset of the problem.
"""

import json
import struct
import warnings
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from scipy.io import wavfile

from ringformer.dsp import MelSpectrogram, Waveform
from ringformer.errors import FormatError
from ringformer.generator import GeneratorConfig, GeneratorWeights

PathLike = Union[str, Path]

MEL_MAGIC = b"MELF"
WEIGHTS_MAGIC = b"RFW1"
MEL_HEADER = struct.Struct("<4sII")
U32 = struct.Struct("<I")

PCM_SCALE = 32767.0
PEAK_TARGET = 0.95


class _Reader:
    """Sequential reader over a file's bytes that reports truncation offsets."""

    def __init__(self, path: Path, data: bytes):
        self.path = path
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(self.path, self.pos,
                              f"truncated {what}: need {n} bytes, {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return U32.unpack(self.take(4, what))[0]

    def floats(self, count: int, what: str) -> np.ndarray:
        start = self.pos
        values = np.frombuffer(self.take(4 * count, what), dtype="<f4")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise FormatError(self.path, start + 4 * int(bad[0]), f"non-finite value in {what}")
        return values

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos


# --- MELF --------------------------------------------------------------------

def write_mel(path: PathLike, mel: Union[MelSpectrogram, np.ndarray]) -> Path:
    """Write an F×T mel matrix, mel-bin major."""
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    if values.ndim != 2:
        raise ValueError(f"mel matrix must be F×T, got shape {values.shape}")
    path = Path(path)
    n_mels, frames = values.shape
    with open(path, "wb") as f:
        f.write(MEL_HEADER.pack(MEL_MAGIC, n_mels, frames))
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
    return path


def read_mel(path: PathLike, sample_rate: int = 22050, hop: int = 256) -> MelSpectrogram:
    path = Path(path)
    reader = _Reader(path, path.read_bytes())
    magic, n_mels, frames = MEL_HEADER.unpack(reader.take(MEL_HEADER.size, "MELF header"))
    if magic != MEL_MAGIC:
        raise FormatError(path, 0, f"bad magic {magic!r}, expected {MEL_MAGIC!r}")
    expected = 4 * n_mels * frames
    if reader.remaining != expected:
        raise FormatError(path, MEL_HEADER.size,
                          f"payload is {reader.remaining} bytes but header declares {n_mels}x{frames} floats "
                          f"({expected} bytes)")
    values = reader.floats(n_mels * frames, "mel payload").reshape(n_mels, frames)
    return MelSpectrogram(values.astype(np.float32), sample_rate=sample_rate, hop=hop)


# --- RFW1 --------------------------------------------------------------------

def _config_bytes(config: GeneratorConfig) -> bytes:
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_weights(path: PathLike, weights: GeneratorWeights) -> Path:
    """Write the config block and every array in canonical order."""
    path = Path(path)
    config = _config_bytes(weights.config)
    arrays = list(weights.named_arrays())
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(U32.pack(len(config)))
        f.write(config)
        f.write(U32.pack(len(arrays)))
        for name, array in arrays:
            encoded = name.encode("utf-8")
            f.write(U32.pack(len(encoded)))
            f.write(encoded)
            f.write(U32.pack(array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return path


def read_weights(path: PathLike) -> GeneratorWeights:
    """
    Load an RFW1 file.

    Raises:
        FormatError: On bad magic, truncation, malformed config JSON,
            duplicate array names or trailing bytes.
        ConfigError: If the stored arrays do not match the embedded config.
    """
    path = Path(path)
    reader = _Reader(path, path.read_bytes())
    magic = reader.take(4, "magic")
    if magic != WEIGHTS_MAGIC:
        raise FormatError(path, 0, f"bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    config_len = reader.u32("config length")
    config_offset = reader.pos
    try:
        params = json.loads(reader.take(config_len, "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(path, config_offset, f"config block is not valid JSON: {exc}") from exc
    if not isinstance(params, dict):
        raise FormatError(path, config_offset, "config block must be a JSON object")
    config = GeneratorConfig.from_dict(params)

    arrays: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32("array count")):
        name_offset = reader.pos
        name_len = reader.u32("array name length")
        try:
            name = reader.take(name_len, "array name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(path, name_offset + 4, f"array name is not UTF-8: {exc}") from exc
        if name in arrays:
            raise FormatError(path, name_offset, f"duplicate array '{name}'")
        rank = reader.u32(f"rank of '{name}'")
        shape: Tuple[int, ...] = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"extents of '{name}'"))
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = reader.floats(count, f"data of '{name}'").reshape(shape)
    if reader.remaining:
        raise FormatError(path, reader.pos, f"{reader.remaining} trailing bytes after the last array")
    return GeneratorWeights.from_named_arrays(config, arrays.items())


# --- WAV ---------------------------------------------------------------------

def _scan_riff(path: Path, data: bytes) -> Tuple[int, int, int]:
    """Validate the chunk layout; return (channels, sample rate, offset of the rate field)."""
    if len(data) < 12:
        raise FormatError(path, len(data), "truncated RIFF header")
    if data[:4] != b"RIFF":
        raise FormatError(path, 0, f"not a RIFF file (magic {data[:4]!r})")
    if data[8:12] != b"WAVE":
        raise FormatError(path, 8, f"RIFF form {data[8:12]!r} is not WAVE")
    fmt = None
    has_data = False
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        size = U32.unpack_from(data, pos + 4)[0]
        body = pos + 8
        if body + size > len(data):
            raise FormatError(path, pos + 4,
                              f"chunk {chunk_id!r} declares {size} bytes, only {len(data) - body} present")
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError(path, pos + 4, f"fmt chunk is {size} bytes, expected at least 16")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag not in (1, 0xFFFE):
                raise FormatError(path, body, f"compressed or non-PCM format tag {tag:#06x}")
            if bits != 16:
                raise FormatError(path, body + 14, f"{bits}-bit samples, only 16-bit PCM is supported")
            if channels < 1:
                raise FormatError(path, body + 2, "zero channels")
            fmt = (channels, rate, body + 4)
        elif chunk_id == b"data":
            if fmt is None:
                raise FormatError(path, pos, "data chunk precedes the fmt chunk")
            has_data = True
        pos = body + size + (size & 1)
    if fmt is None:
        raise FormatError(path, 12, "missing fmt chunk")
    if not has_data:
        raise FormatError(path, len(data), "missing data chunk")
    return fmt


def read_wav(path: PathLike, sample_rate: int = 22050) -> Waveform:
    """Read PCM16 audio as floats in [-1, 1]; stereo is averaged to mono with a warning."""
    path = Path(path)
    channels, rate, rate_offset = _scan_riff(path, path.read_bytes())
    if rate != sample_rate:
        raise FormatError(path, rate_offset, f"sample rate {rate} Hz, expected {sample_rate} Hz (no resampling)")
    try:
        _, pcm = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(path, 0, str(exc)) from exc
    samples = pcm.astype(np.float64) / PCM_SCALE
    if samples.ndim == 2:
        warnings.warn(f"{path}: {channels} channels averaged to mono")
        samples = samples.mean(axis=1)
    return Waveform(samples.astype(np.float32), sample_rate=rate)


def to_pcm16(w: Waveform) -> np.ndarray:
    """Quantize, peak-normalizing to 0.95 first if any sample would clip."""
    x = w.samples.astype(np.float64)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak > 1.0:
        x = x * (PEAK_TARGET / peak)
    return np.round(np.clip(x, -1.0, 1.0) * PCM_SCALE).astype(np.int16)


def write_wav(path: PathLike, w: Waveform) -> Path:
    path = Path(path)
    wavfile.write(path, w.sample_rate, to_pcm16(w))
    return path
