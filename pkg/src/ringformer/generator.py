"""
RingFormer generator: mel spectrogram in, waveform out.

input conv → per stage [transposed conv ×u → snake → multi-receptive-field
fusion → Conformer blocks with ring attention] → output conv → magnitude /
phase heads → iSTFT.
"""

import json
import statistics
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from tqdm.auto import tqdm

from ringformer.attention import AttentionConfig, ScoreBufferTracker, attention_map, ring_attention, vanilla_attention
from ringformer.config.generator_params import DEFAULT_PARAMS
from ringformer.conformer import ConformerConfig, ConformerWeights, conformer_stack, param_specs as conformer_specs
from ringformer.dsp import ComplexSpectrogram, MelSpectrogram, Waveform, check_synthesis, istft
from ringformer.errors import ArgumentError, ConfigError, DimensionError, NumericError
from ringformer.numeric import (ParamSpec, as_tensor, check_finite, conv1d, conv_transpose1d, init_params, linear,
                                resolve_dtype, snake)
from ringformer.verbosity import VerbosityLevel

# Fields that change how a forward pass runs but not the shape of any weight.
RUNTIME_FIELDS = ("block_len", "max_rotations", "num_devices", "seed", "precision", "dropout")


@dataclass
class GeneratorConfig:
    """Generator hyperparameters (defaults: the full-size published setup)."""
    n_mels: int = 80
    input_channels: int = 512
    upsample_rates: List[int] = field(default_factory=lambda: [4, 4])
    upsample_kernels: List[int] = field(default_factory=lambda: [8, 8])
    output_channels: int = 66
    istft_n_fft: int = 64
    istft_hop: int = 16
    sample_rate: int = 22050
    mel_hop: int = 256
    io_kernel: int = 7
    resblock_kernel_sizes: List[int] = field(default_factory=lambda: [3, 7, 11])
    resblock_dilations: List[List[int]] = field(default_factory=lambda: [[1, 3, 5], [1, 3, 5], [1, 3, 5]])
    conformer_blocks: int = 2          # per stage
    conformer_layers: int = 2          # per block
    num_heads: int = 8
    head_dim: int = 64
    depthwise_kernel: int = 31
    dropout: float = 0.1
    block_len: int = 512
    max_rotations: Optional[int] = None
    num_devices: Optional[int] = None  # fixed ring size; overrides block_len per stage
    magnitude_clamp: float = 6.0
    seed: int = 1234
    precision: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Raise ConfigError naming the first violated constraint."""
        bins = self.istft_n_fft // 2 + 1
        if self.output_channels != 2 * bins:
            raise ConfigError(f"output_channels must equal 2·(istft_n_fft/2 + 1) = {2 * bins}, "
                              f"got {self.output_channels}")
        if len(self.upsample_rates) != len(self.upsample_kernels):
            raise ConfigError(f"upsample_rates {self.upsample_rates} and upsample_kernels "
                              f"{self.upsample_kernels} differ in length")
        if int(np.prod(self.upsample_rates)) * self.istft_hop != self.mel_hop:
            raise ConfigError(f"product(upsample_rates)·istft_hop = "
                              f"{int(np.prod(self.upsample_rates)) * self.istft_hop} must equal mel_hop {self.mel_hop}")
        for u, k in zip(self.upsample_rates, self.upsample_kernels):
            if u < 1 or k < u or (k - u) % 2:
                raise ConfigError(f"upsample kernel {k} with rate {u} cannot grow length exactly ×{u} "
                                  f"(needs K >= u and K − u even)")
        if self.input_channels % 2 ** len(self.upsample_rates):
            raise ConfigError(f"input_channels {self.input_channels} must be divisible by "
                              f"2^{len(self.upsample_rates)} for the per-stage halving")
        if len(self.resblock_kernel_sizes) != len(self.resblock_dilations):
            raise ConfigError("resblock_kernel_sizes and resblock_dilations differ in length")
        if any(k % 2 == 0 for k in self.resblock_kernel_sizes) or self.io_kernel % 2 == 0:
            raise ConfigError("resblock and input/output kernels must be odd")
        if self.conformer_blocks < 0 or self.conformer_layers < 0:
            raise ConfigError("conformer_blocks and conformer_layers must be nonnegative")
        if self.num_devices is not None and self.num_devices < 1:
            raise ConfigError(f"num_devices must be positive, got {self.num_devices}")
        if not np.isfinite(self.magnitude_clamp):
            raise ConfigError("magnitude_clamp must be finite")
        resolve_dtype(self.precision)
        check_synthesis(self.istft_n_fft, self.istft_hop)
        if self.has_conformer:
            self.conformer_config()

    @property
    def stage_channels(self) -> List[int]:
        """Channel width after each upsample stage: input_channels / 2^i."""
        return [self.input_channels // 2 ** (i + 1) for i in range(len(self.upsample_rates))]

    @property
    def conformer_dim(self) -> int:
        return self.num_heads * self.head_dim

    @property
    def has_conformer(self) -> bool:
        return self.conformer_blocks > 0 and self.conformer_layers > 0

    @property
    def samples_per_frame(self) -> int:
        return int(np.prod(self.upsample_rates)) * self.istft_hop

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.precision)

    def conformer_config(self) -> ConformerConfig:
        return ConformerConfig(dim=self.conformer_dim, num_heads=self.num_heads, num_layers=self.conformer_layers,
                               depthwise_kernel=self.depthwise_kernel, dropout=self.dropout,
                               block_len=self.block_len, max_rotations=self.max_rotations)

    def to_dict(self) -> dict:
        return asdict(self)

    def architecture(self) -> dict:
        """The fields that determine weight shapes."""
        return {k: v for k, v in self.to_dict().items() if k not in RUNTIME_FIELDS}

    @classmethod
    def from_dict(cls, params: dict) -> 'GeneratorConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(params) - known)
        if unknown:
            raise ConfigError(f"unknown generator config fields: {unknown}")
        return cls(**params)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> 'GeneratorConfig':
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path) as f:
            try:
                params = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(params, dict):
            raise ConfigError(f"{path} must hold a JSON object of GeneratorConfig fields")
        return cls.from_dict(params)

    @classmethod
    def preset(cls, name: str = "base", **overrides) -> 'GeneratorConfig':
        """Config from ``config/generator_params.DEFAULT_PARAMS`` plus keyword overrides."""
        if name not in DEFAULT_PARAMS:
            raise ConfigError(f"unknown preset '{name}', choose from {sorted(DEFAULT_PARAMS)}")
        return cls.from_dict({**DEFAULT_PARAMS[name], **overrides})

    @classmethod
    def base(cls) -> 'GeneratorConfig':
        return cls.preset("base")

    @classmethod
    def desk(cls, **overrides) -> 'GeneratorConfig':
        return cls.preset("desk", **overrides)

    @classmethod
    def debug(cls, **overrides) -> 'GeneratorConfig':
        return cls.preset("debug", **overrides)

    def __str__(self) -> str:
        ring = f"{self.num_devices} devices" if self.num_devices else f"block {self.block_len}"
        return (
            f"GeneratorConfig:\n"
            f"  Mel: {self.n_mels} bins, hop {self.mel_hop} @ {self.sample_rate} Hz\n"
            f"  Channels: {self.input_channels} -> {' -> '.join(map(str, self.stage_channels))} "
            f"-> {self.output_channels}\n"
            f"  Upsampling: rates {self.upsample_rates}, kernels {self.upsample_kernels}\n"
            f"  MRF: kernels {self.resblock_kernel_sizes}, dilations {self.resblock_dilations}\n"
            f"  Conformer: {self.conformer_blocks}x{self.conformer_layers} layers/stage, "
            f"{self.num_heads} heads x {self.head_dim}, kernel {self.depthwise_kernel}, ring {ring}\n"
            f"  iSTFT: n_fft {self.istft_n_fft}, hop {self.istft_hop}\n"
            f"  Seed: {self.seed}, precision {self.precision}"
        )


def param_specs(cfg: GeneratorConfig) -> List[ParamSpec]:
    """All generator arrays in canonical (storage and initialization) order."""
    k_io = cfg.io_kernel
    c_in = cfg.input_channels
    specs = [ParamSpec("conv_pre.weight", (c_in, cfg.n_mels, k_io), fan_in=cfg.n_mels * k_io),
             ParamSpec("conv_pre.bias", (c_in,), fan_in=cfg.n_mels * k_io)]
    for s, (u, k, c_out) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels, cfg.stage_channels)):
        p = f"stages.{s}."
        fan = c_in * (k // u)
        specs += [ParamSpec(p + "upsample.weight", (c_in, c_out, k), fan_in=fan),
                  ParamSpec(p + "upsample.bias", (c_out,), fan_in=fan),
                  ParamSpec(p + "snake.alpha", (c_out,), "ones")]
        for r, (kr, dilations) in enumerate(zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)):
            for j in range(len(dilations)):
                for n in (1, 2):
                    q = f"{p}mrf.{r}."
                    specs += [ParamSpec(f"{q}acts{n}.{j}.alpha", (c_out,), "ones"),
                              ParamSpec(f"{q}convs{n}.{j}.weight", (c_out, c_out, kr), fan_in=c_out * kr),
                              ParamSpec(f"{q}convs{n}.{j}.bias", (c_out,), fan_in=c_out * kr)]
        if cfg.has_conformer:
            d = cfg.conformer_dim
            if d != c_out:
                specs += [ParamSpec(p + "proj_in.weight", (c_out, d), fan_in=c_out),
                          ParamSpec(p + "proj_in.bias", (d,), fan_in=c_out),
                          ParamSpec(p + "proj_out.weight", (d, c_out), fan_in=d),
                          ParamSpec(p + "proj_out.bias", (c_out,), fan_in=d)]
            for b in range(cfg.conformer_blocks):
                specs += conformer_specs(cfg.conformer_config(), prefix=f"{p}conformer.{b}.")
        c_in = c_out
    specs += [ParamSpec("conv_post.weight", (cfg.output_channels, c_in, k_io), fan_in=c_in * k_io),
              ParamSpec("conv_post.bias", (cfg.output_channels,), fan_in=c_in * k_io)]
    return specs


def check_shapes(cfg: GeneratorConfig, shapes: Dict[str, Tuple[int, ...]]):
    """Raise ConfigError unless ``shapes`` matches the arrays ``cfg`` derives."""
    expected = {spec.name: tuple(spec.shape) for spec in param_specs(cfg)}
    missing = sorted(set(expected) - set(shapes))
    extra = sorted(set(shapes) - set(expected))
    if missing or extra:
        raise ConfigError(f"weights do not match config: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, shape in expected.items():
        if tuple(shapes[name]) != shape:
            raise ConfigError(f"weight '{name}' has shape {tuple(shapes[name])}, config requires {shape}")


@dataclass
class GeneratorWeights:
    """Flat name → array mapping for one generator configuration."""
    config: GeneratorConfig
    arrays: Dict[str, np.ndarray]

    def __post_init__(self):
        check_shapes(self.config, {name: a.shape for name, a in self.arrays.items()})

    @classmethod
    def from_named_arrays(cls, config: GeneratorConfig, named) -> 'GeneratorWeights':
        """Rebuild from (name, array) pairs, casting to the config precision."""
        return cls(config, {name: np.asarray(a, dtype=config.dtype) for name, a in named})

    def named_arrays(self) -> Iterator[Tuple[str, np.ndarray]]:
        for spec in param_specs(self.config):
            yield spec.name, self.arrays[spec.name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def conformer(self, stage: int, block: int) -> ConformerWeights:
        return ConformerWeights.from_arrays(self.config.conformer_config(), self.arrays,
                                            prefix=f"stages.{stage}.conformer.{block}.")


def build_generator(cfg: Optional[GeneratorConfig] = None) -> GeneratorWeights:
    """Seeded uniform ±1/√fan_in initialization; the same seed gives identical arrays."""
    cfg = cfg or GeneratorConfig()
    cfg.validate()
    arrays = init_params(param_specs(cfg), np.random.default_rng(cfg.seed), cfg.dtype)
    return GeneratorWeights(cfg, arrays)


def param_count(w: GeneratorWeights) -> int:
    return int(sum(a.size for a in w.arrays.values()))


@contextmanager
def _stage(name: str):
    try:
        yield
    except NumericError as exc:
        raise NumericError(name, f"non-finite values in {name} ({exc.where})") from exc


def _resblock(x: np.ndarray, w: GeneratorWeights, prefix: str, kernel: int, dilations: List[int]) -> np.ndarray:
    for j, dilation in enumerate(dilations):
        h = snake(x, w[f"{prefix}acts1.{j}.alpha"])
        h = conv1d(h, w[f"{prefix}convs1.{j}.weight"], w[f"{prefix}convs1.{j}.bias"],
                   padding=dilation * (kernel - 1) // 2, dilation=dilation)
        h = snake(h, w[f"{prefix}acts2.{j}.alpha"])
        h = conv1d(h, w[f"{prefix}convs2.{j}.weight"], w[f"{prefix}convs2.{j}.bias"], padding=(kernel - 1) // 2)
        x = x + h
    return x


def _mrf(x: np.ndarray, w: GeneratorWeights, stage: int) -> np.ndarray:
    cfg = w.config
    if not cfg.resblock_kernel_sizes:
        return x
    total = None
    for r, (kernel, dilations) in enumerate(zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)):
        out = _resblock(x, w, f"stages.{stage}.mrf.{r}.", kernel, dilations)
        total = out if total is None else total + out
    return total / len(cfg.resblock_kernel_sizes)


def _conformers(x: np.ndarray, w: GeneratorWeights, stage: int, num_devices: Optional[int],
                tracker: Optional[ScoreBufferTracker], probe: Optional[dict]) -> np.ndarray:
    cfg = w.config
    if not cfg.has_conformer:
        return x
    p = f"stages.{stage}."
    h = np.ascontiguousarray(x.T)
    projected = f"{p}proj_in.weight" in w.arrays
    if projected:
        h = linear(h, w[p + "proj_in.weight"], w[p + "proj_in.bias"])
    for b in range(cfg.conformer_blocks):
        block_probe = None
        if probe is not None:
            block_probe = probe.setdefault((stage, b), [])
        h = conformer_stack(h, w.conformer(stage, b), num_devices=num_devices, tracker=tracker, probe=block_probe)
    if projected:
        h = linear(h, w[p + "proj_out.weight"], w[p + "proj_out.bias"])
    return np.ascontiguousarray(h.T)


def synthesize(mel: Union[MelSpectrogram, np.ndarray],
               w: GeneratorWeights,
               num_devices: Optional[int] = None,
               tracker: Optional[ScoreBufferTracker] = None,
               probe: Optional[dict] = None,
               verbosity: VerbosityLevel = VerbosityLevel.QUIET) -> Waveform:
    """
    Run the generator on an F×T mel spectrogram.

    Args:
        mel: Input with F == n_mels and T >= 1 frames.
        w: Generator weights.
        num_devices: Ring size for every Conformer; defaults to ``config.num_devices``,
            else each stage splits its sequence into ``block_len`` blocks.
        tracker: Optional score-buffer counter shared by all attention calls.
        probe: Optional dict filled with per-(stage, block) attention (Q, K) pairs.
        verbosity: Print per-stage shapes at DETAILED.

    Returns:
        Waveform of exactly samples_per_frame·T samples.

    Raises:
        DimensionError: If the mel bin count does not match the config.
        NumericError: If any stage produces NaN/Inf; the stage is named.
    """
    cfg = w.config
    values = mel.values if isinstance(mel, MelSpectrogram) else mel
    x = as_tensor(values, cfg.dtype)
    if x.ndim != 2 or x.shape[0] != cfg.n_mels:
        raise DimensionError(f"mel input must be {cfg.n_mels}×T, got shape {x.shape}")
    if x.shape[1] < 1:
        raise DimensionError("mel input needs at least one frame")
    frames = x.shape[1]
    num_devices = num_devices or cfg.num_devices

    pad_io = cfg.io_kernel // 2
    with _stage("input conv"):
        x = conv1d(x, w["conv_pre.weight"], w["conv_pre.bias"], padding=pad_io)
    for s, (u, k) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels)):
        p = f"stages.{s}."
        with _stage(f"stage {s + 1} upsample"):
            x = conv_transpose1d(x, w[p + "upsample.weight"], w[p + "upsample.bias"], stride=u, padding=(k - u) // 2)
            x = snake(x, w[p + "snake.alpha"])
        with _stage(f"stage {s + 1} mrf"):
            x = check_finite(_mrf(x, w, s), "mrf")
        with _stage(f"stage {s + 1} conformer"):
            x = _conformers(x, w, s, num_devices, tracker, probe)
        if verbosity >= VerbosityLevel.DETAILED:
            print(f"  stage {s + 1}: {x.shape[0]} channels x {x.shape[1]} tokens")
    with _stage("output conv"):
        x = conv1d(x, w["conv_post.weight"], w["conv_post.bias"], padding=pad_io)

    bins = cfg.istft_n_fft // 2 + 1
    with _stage("spectral head"):
        magnitude = check_finite(np.exp(np.minimum(x[:bins], cfg.magnitude_clamp)), "magnitude head")
        phase = np.pi * np.tanh(x[bins:])
        spec = ComplexSpectrogram(magnitude, phase, n_fft=cfg.istft_n_fft, hop=cfg.istft_hop)
    with _stage("istft"):
        audio = istft(spec, length=frames * cfg.samples_per_frame)
    return Waveform(audio.samples, sample_rate=cfg.sample_rate)


@dataclass
class BenchmarkReport:
    """Median timings of generator synthesis and of the attention kernels at the final stage length."""
    frames: int
    samples: int
    tokens: int
    repeats: int
    wall_time: float
    samples_per_sec: float
    realtime_factor: float
    peak_score_elements: int
    vanilla_peak_score_elements: int
    ring_attention_ms: float
    vanilla_attention_ms: float

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        return (f"Synthesis of {self.frames} frames ({self.samples} samples): {self.wall_time * 1e3:.1f} ms median "
                f"over {self.repeats} runs, {self.realtime_factor:.2f}x real time\n"
                f"  Attention @ {self.tokens} tokens: ring {self.ring_attention_ms:.1f} ms "
                f"(peak {self.peak_score_elements} scores), vanilla {self.vanilla_attention_ms:.1f} ms "
                f"(peak {self.vanilla_peak_score_elements} scores)")


def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times) * 1e3


def benchmark_synthesis(cfg: GeneratorConfig,
                        T_frames: int,
                        repeats: int = 3,
                        verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> BenchmarkReport:
    """Time ``synthesize`` on a seeded random mel and the ring/vanilla attention kernels it relies on."""
    if repeats < 3:
        raise ArgumentError(f"repeats must be >= 3 for a median, got {repeats}")
    if T_frames < 1:
        raise ArgumentError(f"T_frames must be positive, got {T_frames}")
    weights = build_generator(cfg)
    rng = np.random.default_rng(cfg.seed)
    mel = MelSpectrogram(rng.normal(-5.0, 2.0, size=(cfg.n_mels, T_frames)).astype(cfg.dtype))

    tracker = ScoreBufferTracker()
    times = []
    for _ in tqdm(range(repeats), desc="Synthesizing", disable=(verbosity == VerbosityLevel.QUIET)):
        tracker.reset()
        start = time.perf_counter()
        synthesize(mel, weights, tracker=tracker)
        times.append(time.perf_counter() - start)
    wall = statistics.median(times)
    samples = T_frames * cfg.samples_per_frame

    tokens = T_frames * int(np.prod(cfg.upsample_rates))
    if cfg.num_devices:
        attn_cfg = AttentionConfig.for_devices(tokens, cfg.num_devices, num_heads=1, head_dim=cfg.head_dim)
    else:
        attn_cfg = AttentionConfig(seq_len=tokens, block_len=cfg.block_len, num_heads=1, head_dim=cfg.head_dim)
    q, k, v = (rng.standard_normal((tokens, cfg.head_dim)).astype(cfg.dtype) for _ in range(3))
    ring_tracker, vanilla_tracker = ScoreBufferTracker(), ScoreBufferTracker()
    ring_ms = _median_ms(lambda: ring_attention(q, k, v, attn_cfg, tracker=ring_tracker), repeats)
    vanilla_ms = _median_ms(lambda: vanilla_attention(q, k, v, tracker=vanilla_tracker), repeats)

    report = BenchmarkReport(
        frames=T_frames,
        samples=samples,
        tokens=tokens,
        repeats=repeats,
        wall_time=wall,
        samples_per_sec=samples / wall,
        realtime_factor=(samples / cfg.sample_rate) / wall,
        peak_score_elements=max(tracker.peak, ring_tracker.peak),
        vanilla_peak_score_elements=vanilla_tracker.peak,
        ring_attention_ms=ring_ms,
        vanilla_attention_ms=vanilla_ms,
    )
    if verbosity >= VerbosityLevel.BASIC:
        print(report)
    return report


class Vocoder:
    """Generator weights bundled with the operations run on them."""

    def __init__(self, config: Optional[GeneratorConfig] = None,
                 weights: Optional[GeneratorWeights] = None,
                 verbosity: VerbosityLevel = VerbosityLevel.BASIC):
        if weights is None:
            weights = build_generator(config or GeneratorConfig())
        elif config is not None and config.architecture() != weights.config.architecture():
            raise ConfigError("config does not match the architecture of the supplied weights")
        self.weights = weights
        self.config = weights.config
        self.verbosity = verbosity
        if verbosity >= VerbosityLevel.DETAILED:
            print(self.config)
            print(f"  Parameters: {self.num_parameters:,}")

    @classmethod
    def load(cls, path: Union[str, Path], verbosity: VerbosityLevel = VerbosityLevel.BASIC) -> 'Vocoder':
        from ringformer.formats import read_weights
        return cls(weights=read_weights(path), verbosity=verbosity)

    def save(self, path: Union[str, Path]) -> Path:
        from ringformer.formats import write_weights
        return write_weights(path, self.weights)

    @property
    def num_parameters(self) -> int:
        return param_count(self.weights)

    def synthesize(self, mel: Union[MelSpectrogram, np.ndarray], num_devices: Optional[int] = None) -> Waveform:
        if self.verbosity >= VerbosityLevel.BASIC:
            frames = mel.frames if isinstance(mel, MelSpectrogram) else np.shape(mel)[-1]
            print(f"Vocoding {frames} frames")
        return synthesize(mel, self.weights, num_devices=num_devices, verbosity=self.verbosity)

    def attention_maps(self, mel: Union[MelSpectrogram, np.ndarray],
                       stage: int = 0, block: int = 0, layer: int = 0, head: int = 0,
                       segment: int = 32, window: Optional[int] = None,
                       window_block_len: int = 8) -> Dict[str, np.ndarray]:
        """
        Attention maps of one Conformer head over the first ``segment`` tokens.

        Returns the global map, and with ``window`` set also the map a ring of
        ``window_block_len``-token blocks sees after ``window`` rotations.
        """
        if not self.config.has_conformer:
            raise ConfigError("this generator has no Conformer layers")
        probe = {}
        synthesize(mel, self.weights, probe=probe)
        try:
            q, k = probe[(stage, block)][layer][head]
        except (KeyError, IndexError) as exc:
            raise ArgumentError(f"no attention head at stage {stage}, block {block}, layer {layer}, "
                                f"head {head}") from exc
        segment = min(segment, q.shape[0])
        q, k = q[:segment], k[:segment]
        full = AttentionConfig(seq_len=segment, block_len=segment, num_heads=1, head_dim=q.shape[1])
        maps = {"global": attention_map(q, k, full)}
        if window is not None:
            windowed = AttentionConfig(seq_len=segment, block_len=window_block_len, num_heads=1,
                                       head_dim=q.shape[1], max_rotations=window)
            maps[f"window {window}"] = attention_map(q, k, windowed)
        return maps
