"""
Adversarial and spectral losses, and a forward-only multi-period discriminator.

Two discriminator families are weighted by ``alpha`` / ``1 - alpha``: the
multi-period discriminator (theta) and a second family (psi). Only forward
passes are computed; there are no gradients here.
"""

import json
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ringformer.config.generator_params import DISCRIMINATOR_PARAMS
from ringformer.dsp import LOSS_HOP, LOSS_N_FFT, PHASE_EPS, Waveform, stft
from ringformer.errors import ArgumentError, ConfigError, DegenerateInputError, DimensionError
from ringformer.numeric import ParamSpec, as_tensor, conv2d_column, init_params, leaky_relu, resolve_dtype

EXTERNAL_TERMS = ("recon", "kl", "dur")

ScoreLike = Union[np.ndarray, "DiscriminatorOutput"]


@dataclass
class DiscriminatorOutput:
    """Final-layer logits plus every intermediate activation, in layer order."""
    score_map: np.ndarray
    features: List[np.ndarray]

    def __post_init__(self):
        if not self.features:
            raise ArgumentError("discriminator output needs at least one feature map")
        if any(f.size == 0 for f in self.features):
            raise ArgumentError("discriminator feature maps must be non-empty")


@dataclass
class MPDConfig:
    """Multi-period discriminator layout (HiFi-GAN)."""
    periods: List[int] = field(default_factory=lambda: [2, 3, 5, 7, 9])
    kernel_size: int = 5
    stride: int = 3
    channels: List[int] = field(default_factory=lambda: [32, 128, 512, 1024, 1024])
    leaky_slope: float = 0.1
    post_kernel: int = 3
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if not self.periods or any(p < 1 for p in self.periods):
            raise ConfigError(f"periods must be positive, got {self.periods}")
        if self.kernel_size % 2 == 0 or self.post_kernel % 2 == 0:
            raise ConfigError("discriminator kernels must be odd")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        resolve_dtype(self.precision)

    @property
    def strides(self) -> List[int]:
        """Stride of each conv layer; the last widening layer keeps full height."""
        return [self.stride] * (len(self.channels) - 1) + [1]

    @classmethod
    def preset(cls, name: str = "mpd", **overrides) -> 'MPDConfig':
        if name not in DISCRIMINATOR_PARAMS or "periods" not in DISCRIMINATOR_PARAMS[name]:
            raise ConfigError(f"unknown discriminator preset '{name}'")
        return cls(**{**DISCRIMINATOR_PARAMS[name], **overrides})

    @classmethod
    def hifigan(cls, seed: int = 0) -> 'MPDConfig':
        return cls.preset("mpd", seed=seed)

    @classmethod
    def desk(cls, seed: int = 0) -> 'MPDConfig':
        """Same layout with narrow channels."""
        return cls.preset("mpd_desk", seed=seed)

    def __str__(self) -> str:
        return (f"MPDConfig: periods {self.periods}, kernel {self.kernel_size}x1, strides {self.strides}, "
                f"channels {self.channels}, seed {self.seed}")


def mpd_param_specs(cfg: MPDConfig) -> List[ParamSpec]:
    specs = []
    k = cfg.kernel_size
    for i, _ in enumerate(cfg.periods):
        c_in = 1
        for layer, c_out in enumerate(cfg.channels):
            name = f"discriminators.{i}.convs.{layer}"
            specs += [ParamSpec(f"{name}.weight", (c_out, c_in, k, 1), fan_in=c_in * k),
                      ParamSpec(f"{name}.bias", (c_out,), fan_in=c_in * k)]
            c_in = c_out
        fan = c_in * cfg.post_kernel
        specs += [ParamSpec(f"discriminators.{i}.conv_post.weight", (1, c_in, cfg.post_kernel, 1), fan_in=fan),
                  ParamSpec(f"discriminators.{i}.conv_post.bias", (1,), fan_in=fan)]
    return specs


def fold_waveform(x: Union[Waveform, np.ndarray], period: int) -> np.ndarray:
    """Zero-pad to a multiple of ``period`` and reshape to (length/period, period)."""
    if period < 1:
        raise ArgumentError(f"period must be positive, got {period}")
    samples = x.samples if isinstance(x, Waveform) else as_tensor(x)
    if samples.ndim != 1 or samples.shape[0] == 0:
        raise DimensionError(f"expected a non-empty 1-D waveform, got shape {samples.shape}")
    pad = -samples.shape[0] % period
    if pad:
        samples = np.pad(samples, (0, pad))
    return samples.reshape(-1, period)


def mpd_forward(x: Union[Waveform, np.ndarray], period: int, w: Mapping[str, np.ndarray],
                cfg: Optional[MPDConfig] = None) -> DiscriminatorOutput:
    """
    One period sub-discriminator.

    ``w`` holds ``convs.<l>.weight/bias`` and ``conv_post.weight/bias`` for
    this period. Heights shrink as floor((h + 2·2 − 5)/s) + 1 per layer,
    with s = ``cfg.stride`` (3) on every layer but the last, which uses
    stride 1 as in HiFi-GAN, so the final conv keeps its input height.
    """
    cfg = cfg or MPDConfig()
    h = fold_waveform(x, period)[None].astype(resolve_dtype(cfg.precision))
    features = []
    for layer, stride in enumerate(cfg.strides):
        h = conv2d_column(h, w[f"convs.{layer}.weight"], w[f"convs.{layer}.bias"],
                          stride=stride, padding=cfg.kernel_size // 2)
        h = leaky_relu(h, cfg.leaky_slope)
        features.append(h)
    score = conv2d_column(h, w["conv_post.weight"], w["conv_post.bias"], padding=cfg.post_kernel // 2)
    features.append(score)
    return DiscriminatorOutput(score_map=score, features=features)


class DiscriminatorFamily(ABC):
    """A set of sub-discriminators scored together under one family weight."""

    name = "family"

    @abstractmethod
    def forward(self, x: Union[Waveform, np.ndarray]) -> List[DiscriminatorOutput]:
        """One output per sub-discriminator."""

    def __call__(self, x: Union[Waveform, np.ndarray]) -> List[DiscriminatorOutput]:
        return self.forward(x)


class MultiPeriodDiscriminator(DiscriminatorFamily):
    """Seeded, randomly initialized MPD ensemble."""

    name = "mpd"

    def __init__(self, config: Optional[MPDConfig] = None):
        self.config = config or MPDConfig()
        specs = mpd_param_specs(self.config)
        self.arrays = init_params(specs, np.random.default_rng(self.config.seed), self.config.precision)

    def period_weights(self, index: int) -> Dict[str, np.ndarray]:
        prefix = f"discriminators.{index}."
        return {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}

    @property
    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def forward(self, x: Union[Waveform, np.ndarray]) -> List[DiscriminatorOutput]:
        return [mpd_forward(x, p, self.period_weights(i), self.config) for i, p in enumerate(self.config.periods)]


@dataclass
class FamilyScores:
    """Score maps of the theta (MPD) and psi families for one input."""
    theta: List[ScoreLike]
    psi: List[ScoreLike]

    @classmethod
    def from_families(cls, x: Union[Waveform, np.ndarray],
                      theta: DiscriminatorFamily, psi: DiscriminatorFamily) -> 'FamilyScores':
        return cls(theta=theta(x), psi=psi(x))


def _score(s: ScoreLike) -> np.ndarray:
    return np.asarray(s.score_map if isinstance(s, DiscriminatorOutput) else s, dtype=np.float64)


def _member_mean(scores: Sequence[ScoreLike], target: float, what: str) -> float:
    """Mean over ensemble members of mean((target − D)²)."""
    if len(scores) == 0:
        raise ArgumentError(f"empty score list for {what}")
    return float(np.mean([np.mean((target - _score(s)) ** 2) for s in scores]))


def _check_alpha(alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must be in [0, 1], got {alpha}")


def adversarial_losses(real_scores: FamilyScores,
                       fake_scores_for_D: FamilyScores,
                       fake_scores_for_G: FamilyScores,
                       alpha: float = 0.5) -> Tuple[float, float]:
    """
    Least-squares GAN losses of both families.

        L_G = α·mean((1 − D_θ(G))²) + (1 − α)·mean((1 − D_ψ(G))²)
        L_D = α·[mean((1 − D_θ(x))²) + mean(D_θ(G)²)] + (1 − α)·[same for ψ]

    Means run over score-map elements, then over ensemble members.
    """
    _check_alpha(alpha)
    family_g, family_d = [], []
    for fam in ("theta", "psi"):
        real = getattr(real_scores, fam)
        fake_d = getattr(fake_scores_for_D, fam)
        fake_g = getattr(fake_scores_for_G, fam)
        family_g.append(_member_mean(fake_g, 1.0, f"{fam} generated scores"))
        family_d.append(_member_mean(real, 1.0, f"{fam} real scores") +
                        _member_mean(fake_d, 0.0, f"{fam} generated scores"))
    l_g = alpha * family_g[0] + (1.0 - alpha) * family_g[1]
    l_d = alpha * family_d[0] + (1.0 - alpha) * family_d[1]
    return l_g, l_d


def _paired_spectra(x: Waveform, y: Waveform):
    if len(x) != len(y):
        raise ArgumentError(f"waveform lengths differ: {len(x)} vs {len(y)} samples (trim first)")
    sx = stft(Waveform(x.samples.astype(np.float64), x.sample_rate), LOSS_N_FFT, LOSS_HOP)
    sy = stft(Waveform(y.samples.astype(np.float64), y.sample_rate), LOSS_N_FFT, LOSS_HOP)
    return sx, sy


def magnitude_loss(x: Waveform, y: Waveform) -> float:
    """Mean absolute difference of STFT magnitudes (n_fft 1024, hop 256)."""
    sx, sy = _paired_spectra(x, y)
    return float(np.mean(np.abs(sx.magnitude - sy.magnitude)))


def phase_loss(x: Waveform, y: Waveform) -> float:
    """
    Mean of 1 − cos(φ_x − φ_y) over bins where both magnitudes are at least 1e-8.

    Raises:
        DegenerateInputError: If no bin carries energy in both signals.
    """
    sx, sy = _paired_spectra(x, y)
    keep = (sx.magnitude >= PHASE_EPS) & (sy.magnitude >= PHASE_EPS)
    if not keep.any():
        raise DegenerateInputError("phase loss undefined: every time-frequency bin is below 1e-8 magnitude")
    distance = 1.0 - np.cos(sx.phase[keep] - sy.phase[keep])
    return float(np.clip(np.mean(distance), 0.0, 2.0))


def spectral_decomposition_loss(x: Waveform, y: Waveform) -> float:
    return magnitude_loss(x, y) + phase_loss(x, y)


def feature_matching_loss(real: Sequence[DiscriminatorOutput], fake: Sequence[DiscriminatorOutput]) -> float:
    """Per sub-discriminator Σ_layers mean|real − fake|, averaged over sub-discriminators."""
    if len(real) != len(fake):
        raise ArgumentError(f"{len(real)} real vs {len(fake)} generated discriminator outputs")
    if not real:
        raise ArgumentError("feature matching needs at least one discriminator output")
    totals = []
    for k, (r, f) in enumerate(zip(real, fake)):
        if len(r.features) != len(f.features):
            raise ArgumentError(f"sub-discriminator {k}: {len(r.features)} vs {len(f.features)} feature maps")
        total = 0.0
        for layer, (fr, ff) in enumerate(zip(r.features, f.features)):
            if fr.shape != ff.shape:
                raise ArgumentError(f"sub-discriminator {k} layer {layer}: shapes {fr.shape} vs {ff.shape}")
            total += float(np.mean(np.abs(fr.astype(np.float64) - ff.astype(np.float64))))
        totals.append(total)
    return float(np.mean(totals))


@dataclass
class LossWeights:
    """Family balance and loss coefficients of the combined objective."""
    alpha: float = 0.5
    lambda_sd: float = 0.7
    lambda_fm: float = 1.0
    lambda_recon: float = 45.0
    lambda_kl: float = 1.0
    lambda_dur: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        negative = [k for k, v in asdict(self).items() if k.startswith("lambda_") and v < 0]
        if negative:
            raise ConfigError(f"loss weights must be nonnegative: {negative}")

    def to_dict(self) -> dict:
        return asdict(self)


def total_loss(adv: float, sd: float, fm: float,
               external: Optional[Mapping[str, float]] = None,
               weights: Optional[LossWeights] = None) -> Tuple[float, Dict[str, float]]:
    """
    adv + λ_sd·sd + λ_fm·fm + λ_recon·recon + λ_kl·kl + λ_dur·dur.

    ``external`` supplies recon/kl/dur as plain scalars (missing ones are 0).
    Returns the total and the weighted terms by name.
    """
    weights = weights or LossWeights()
    external = dict(external or {})
    unknown = sorted(set(external) - set(EXTERNAL_TERMS))
    if unknown:
        raise ArgumentError(f"unknown external loss terms {unknown}, expected {list(EXTERNAL_TERMS)}")
    components = {"adv": adv, "sd": sd, "fm": fm, **{k: external.get(k, 0.0) for k in EXTERNAL_TERMS}}
    negative = {k: v for k, v in components.items() if v < 0}
    if negative:
        raise ArgumentError(f"loss components must be nonnegative, got {negative}")
    coefficients = {"adv": 1.0, "sd": weights.lambda_sd, "fm": weights.lambda_fm,
                    "recon": weights.lambda_recon, "kl": weights.lambda_kl, "dur": weights.lambda_dur}
    terms = {k: coefficients[k] * float(v) for k, v in components.items()}
    return sum(terms.values()), terms


@dataclass
class LossReport:
    l_g: float
    l_d: float
    l_mag: float
    l_phase: float
    l_sd: float
    l_fm: float
    l_total: float
    weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def evaluate_losses(real: Waveform, fake: Waveform,
                    theta: DiscriminatorFamily, psi: DiscriminatorFamily,
                    weights: Optional[LossWeights] = None,
                    external: Optional[Mapping[str, float]] = None) -> LossReport:
    """Score ``fake`` against ``real`` with both families and the spectral losses."""
    weights = weights or LossWeights()
    real_theta, real_psi = theta(real), psi(real)
    fake_theta, fake_psi = theta(fake), psi(fake)
    real_scores = FamilyScores(real_theta, real_psi)
    fake_scores = FamilyScores(fake_theta, fake_psi)
    l_g, l_d = adversarial_losses(real_scores, fake_scores, fake_scores, weights.alpha)
    l_mag = magnitude_loss(real, fake)
    l_phase = phase_loss(real, fake)
    l_sd = l_mag + l_phase
    l_fm = feature_matching_loss(real_theta + real_psi, fake_theta + fake_psi)
    l_total, _ = total_loss(l_g, l_sd, l_fm, external, weights)
    return LossReport(l_g=l_g, l_d=l_d, l_mag=l_mag, l_phase=l_phase, l_sd=l_sd, l_fm=l_fm,
                      l_total=l_total, weights=weights)
