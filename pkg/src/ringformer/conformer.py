"""
Conformer blocks with ring attention.

Macaron layout: half-step feed-forward, multi-head self-attention, depthwise
convolution module, half-step feed-forward, final layer norm. The conv
module normalizes with layer norm (no batch statistics at inference).
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ringformer.attention import AttentionConfig, ScoreBufferTracker, ring_attention
from ringformer.errors import ConfigError, DimensionError
from ringformer.numeric import (ParamSpec, check_finite, conv1d, glu, init_params, layer_norm, linear,
                                swish)

SUBMODULES = ("ffn1", "attn", "conv", "ffn2", "final")


@dataclass
class ConformerConfig:
    """Shape and runtime settings of a Conformer stack."""
    dim: int = 512
    num_heads: int = 8
    ffn_dim: Optional[int] = None      # defaults to dim // 2
    num_layers: int = 2
    depthwise_kernel: int = 31
    dropout: float = 0.1               # only applied through the dropout test hook
    block_len: int = 512
    max_rotations: Optional[int] = None
    eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = self.dim // 2
        if self.dim < 1 or self.num_heads < 1 or self.dim % self.num_heads:
            raise ConfigError(f"conformer dim {self.dim} must be divisible by num_heads {self.num_heads}")
        if self.depthwise_kernel < 1 or self.depthwise_kernel % 2 == 0:
            raise ConfigError(f"depthwise_kernel must be odd, got {self.depthwise_kernel}")
        if self.num_layers < 0 or self.ffn_dim < 1:
            raise ConfigError(f"invalid conformer layers={self.num_layers}, ffn_dim={self.ffn_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    def attention_config(self, seq_len: int, num_devices: Optional[int] = None) -> AttentionConfig:
        """Ring partitioning for a sequence of ``seq_len`` tokens."""
        if num_devices is not None:
            return AttentionConfig.for_devices(seq_len, num_devices, num_heads=self.num_heads,
                                               head_dim=self.head_dim, max_rotations=self.max_rotations)
        return AttentionConfig(seq_len=seq_len, block_len=self.block_len, num_heads=self.num_heads,
                               head_dim=self.head_dim, max_rotations=self.max_rotations)


def layer_param_specs(cfg: ConformerConfig, prefix: str = "") -> List[ParamSpec]:
    """Every array of one Conformer layer, in storage order."""
    d, f, k = cfg.dim, cfg.ffn_dim, cfg.depthwise_kernel
    specs = []

    def norm(name):
        specs.append(ParamSpec(f"{prefix}{name}_gain", (d,), "ones"))
        specs.append(ParamSpec(f"{prefix}{name}_bias", (d,), "zeros"))

    for ffn in ("ffn1", "ffn2"):
        norm(f"{ffn}.norm")
        specs += [ParamSpec(f"{prefix}{ffn}.w1", (d, f), fan_in=d),
                  ParamSpec(f"{prefix}{ffn}.b1", (f,), fan_in=d),
                  ParamSpec(f"{prefix}{ffn}.w2", (f, d), fan_in=f),
                  ParamSpec(f"{prefix}{ffn}.b2", (d,), fan_in=f)]
    norm("attn.norm")
    for proj in ("q", "k", "v", "o"):
        specs += [ParamSpec(f"{prefix}attn.w{proj}", (d, d), fan_in=d),
                  ParamSpec(f"{prefix}attn.b{proj}", (d,), fan_in=d)]
    norm("conv.norm")
    specs += [ParamSpec(f"{prefix}conv.pw1", (2 * d, d, 1), fan_in=d),
              ParamSpec(f"{prefix}conv.pw1_bias", (2 * d,), fan_in=d),
              ParamSpec(f"{prefix}conv.dw", (d, 1, k), fan_in=k),
              ParamSpec(f"{prefix}conv.dw_bias", (d,), fan_in=k)]
    norm("conv.mid_norm")
    specs += [ParamSpec(f"{prefix}conv.pw2", (d, d, 1), fan_in=d),
              ParamSpec(f"{prefix}conv.pw2_bias", (d,), fan_in=d)]
    norm("final.norm")
    return specs


def param_specs(cfg: ConformerConfig, prefix: str = "") -> List[ParamSpec]:
    return [spec for i in range(cfg.num_layers) for spec in layer_param_specs(cfg, f"{prefix}layers.{i}.")]


def _group_layer(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, Dict[str, np.ndarray]]:
    layer = {name: {} for name in SUBMODULES}
    for key, value in arrays.items():
        if key.startswith(prefix):
            module, _, leaf = key[len(prefix):].partition(".")
            layer[module][leaf] = value
    return layer


@dataclass
class ConformerWeights:
    """Per-layer arrays grouped by sub-module (ffn1, attn, conv, ffn2, final)."""
    config: ConformerConfig
    layers: List[Dict[str, Dict[str, np.ndarray]]]

    @classmethod
    def from_arrays(cls, cfg: ConformerConfig, arrays: Dict[str, np.ndarray], prefix: str = "") -> 'ConformerWeights':
        """Group flat ``prefix + "layers.i.<module>.<leaf>"`` arrays; arrays are shared, not copied."""
        return cls(cfg, [_group_layer(arrays, f"{prefix}layers.{i}.") for i in range(cfg.num_layers)])

    def named_arrays(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            for module in SUBMODULES:
                for leaf, value in layer[module].items():
                    yield f"{prefix}layers.{i}.{module}.{leaf}", value


def init_conformer(cfg: ConformerConfig, seed: int = 0, dtype=None) -> ConformerWeights:
    """Seeded uniform ±1/√fan_in initialization, unit norms."""
    arrays = init_params(param_specs(cfg), np.random.default_rng(seed), dtype)
    return ConformerWeights.from_arrays(cfg, arrays)


def zero_conformer_weights(cfg: ConformerConfig, dtype=None) -> ConformerWeights:
    """All projections and convolutions zero, all norms identity."""
    specs = [spec._replace(init="zeros") if spec.init == "uniform" else spec for spec in param_specs(cfg)]
    return ConformerWeights.from_arrays(cfg, init_params(specs, np.random.default_rng(0), dtype))


def _check_input(x: np.ndarray, d: int, module: str):
    if x.ndim != 2 or x.shape[1] != d or x.shape[0] < 1:
        raise DimensionError(f"{module} expects a T×{d} input, got shape {x.shape}")


def feed_forward_module(x: np.ndarray, w: Dict[str, np.ndarray]) -> np.ndarray:
    """layer_norm → linear d→d/2 → swish → linear d/2→d (residual applied by the caller)."""
    _check_input(x, w["w1"].shape[0], "feed_forward_module")
    h = layer_norm(x, w["norm_gain"], w["norm_bias"])
    h = swish(linear(h, w["w1"], w["b1"]))
    return linear(h, w["w2"], w["b2"])


def mhsa_module(x: np.ndarray,
                w: Dict[str, np.ndarray],
                attn_cfg: AttentionConfig,
                tracker: Optional[ScoreBufferTracker] = None,
                probe: Optional[list] = None) -> np.ndarray:
    """
    Multi-head self-attention through ring attention.

    Args:
        x: T×d input with d == num_heads·head_dim.
        w: attention arrays (norm, wq/bq, wk/bk, wv/bv, wo/bo).
        attn_cfg: ring partitioning for this sequence.
        tracker: optional score-buffer counter.
        probe: if given, per-head (Q_h, K_h) pairs are appended to it.

    Returns:
        T×d attention output before the residual.
    """
    d = attn_cfg.model_dim
    _check_input(x, d, "mhsa_module")
    if w["wq"].shape != (d, d):
        raise DimensionError(f"attention projections {w['wq'].shape} do not match {attn_cfg}")
    t, heads, hd = x.shape[0], attn_cfg.num_heads, attn_cfg.head_dim
    h = layer_norm(x, w["norm_gain"], w["norm_bias"])

    def split(proj):
        out = linear(h, w[f"w{proj}"], w[f"b{proj}"])
        return np.ascontiguousarray(out.reshape(t, heads, hd).transpose(1, 0, 2))

    q, k, v = split("q"), split("k"), split("v")
    if probe is not None:
        probe.extend((q[i], k[i]) for i in range(heads))
    attended = ring_attention(q, k, v, attn_cfg, tracker=tracker)
    merged = attended.transpose(1, 0, 2).reshape(t, d)
    return linear(merged, w["wo"], w["bo"])


def conv_module(x: np.ndarray, w: Dict[str, np.ndarray], eps: float = 1e-5) -> np.ndarray:
    """layer_norm → pointwise d→2d → GLU → depthwise (same length) → norm → swish → pointwise."""
    d = w["dw"].shape[0]
    _check_input(x, d, "conv_module")
    k = w["dw"].shape[2]
    h = layer_norm(x, w["norm_gain"], w["norm_bias"], eps).T
    h = glu(conv1d(h, w["pw1"], w["pw1_bias"]), axis=0)
    h = conv1d(h, w["dw"], w["dw_bias"], padding=k // 2, groups=d)
    h = swish(layer_norm(h.T, w["mid_norm_gain"], w["mid_norm_bias"], eps))
    return np.ascontiguousarray(conv1d(np.ascontiguousarray(h.T), w["pw2"], w["pw2_bias"]).T)


def _dropout(x: np.ndarray, rate: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    if rng is None or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return np.where(keep, x / (1.0 - rate), 0).astype(x.dtype)


def conformer_block(x: np.ndarray,
                    layer: Dict[str, Dict[str, np.ndarray]],
                    attn_cfg: AttentionConfig,
                    tracker: Optional[ScoreBufferTracker] = None,
                    dropout: float = 0.0,
                    dropout_rng: Optional[np.random.Generator] = None,
                    probe: Optional[list] = None,
                    eps: float = 1e-5) -> np.ndarray:
    """
    One Conformer layer:

        y = x + ½·FFN₁(x); y = y + MHSA(y); y = y + Conv(y); y = y + ½·FFN₂(y)
        out = layer_norm(y)

    Dropout is inactive unless ``dropout_rng`` is supplied.
    """
    y = x + 0.5 * _dropout(feed_forward_module(x, layer["ffn1"]), dropout, dropout_rng)
    y = y + _dropout(mhsa_module(y, layer["attn"], attn_cfg, tracker, probe), dropout, dropout_rng)
    y = y + _dropout(conv_module(y, layer["conv"], eps), dropout, dropout_rng)
    y = y + 0.5 * _dropout(feed_forward_module(y, layer["ffn2"]), dropout, dropout_rng)
    out = layer_norm(y, layer["final"]["norm_gain"], layer["final"]["norm_bias"], eps)
    return check_finite(out, "conformer_block")


def conformer_stack(x: np.ndarray,
                    w: ConformerWeights,
                    num_devices: Optional[int] = None,
                    tracker: Optional[ScoreBufferTracker] = None,
                    dropout_rng: Optional[np.random.Generator] = None,
                    probe: Optional[list] = None) -> np.ndarray:
    """Apply every layer of ``w``; ``probe`` collects one list of head pairs per layer."""
    cfg = w.config
    attn_cfg = cfg.attention_config(x.shape[0], num_devices)
    for layer in w.layers:
        layer_probe = None
        if probe is not None:
            layer_probe = []
            probe.append(layer_probe)
        x = conformer_block(x, layer, attn_cfg, tracker, cfg.dropout, dropout_rng, layer_probe, cfg.eps)
    return x
