"""
Blockwise ring attention over simulated devices.

Each device is a worker thread holding one query block. Key/value blocks
travel around the ring through per-device inboxes (``queue.Queue``); at every
rotation step a device folds the block it currently holds into an
online-softmax accumulator. Rotation order is fixed, so the floating-point
summation order, and therefore the result, does not depend on scheduling.
"""

import math
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from ringformer.errors import ArgumentError, ConfigError, DeviceError, DimensionError, ProtocolError
from ringformer.numeric import check_finite

MAX_EXPORT_TOKENS = 4096
# Seconds a device waits for its predecessor before declaring the ring stuck.
RECEIVE_TIMEOUT = 120.0


@dataclass
class AttentionConfig:
    """Ring partitioning of one attention call."""
    seq_len: int
    block_len: int = 512
    num_heads: int = 8
    head_dim: int = 64
    max_rotations: Optional[int] = None  # restricted-window mode when < num_devices

    def __post_init__(self):
        if self.seq_len < 1:
            raise ConfigError(f"seq_len must be positive, got {self.seq_len}")
        if self.block_len < 1:
            raise ConfigError(f"block_len must be positive, got {self.block_len}")
        if self.num_heads < 1 or self.head_dim < 1:
            raise ConfigError(f"num_heads and head_dim must be positive, got {self.num_heads}, {self.head_dim}")
        if self.max_rotations is not None and self.max_rotations < 1:
            raise ConfigError(f"max_rotations must be positive, got {self.max_rotations}")

    @classmethod
    def for_devices(cls, seq_len: int, num_devices: int, **kwargs) -> 'AttentionConfig':
        """Config whose block length splits ``seq_len`` over ``num_devices`` devices."""
        if num_devices < 1:
            raise ConfigError(f"num_devices must be positive, got {num_devices}")
        return cls(seq_len=seq_len, block_len=-(-seq_len // num_devices), **kwargs)

    @property
    def effective_block_len(self) -> int:
        return min(self.block_len, self.seq_len)

    @property
    def num_devices(self) -> int:
        return -(-self.seq_len // self.effective_block_len)

    @property
    def rotations(self) -> int:
        if self.max_rotations is None:
            return self.num_devices
        return min(self.max_rotations, self.num_devices)

    @property
    def model_dim(self) -> int:
        return self.num_heads * self.head_dim

    def __str__(self) -> str:
        window = "" if self.rotations == self.num_devices else f", window {self.rotations}"
        return (f"AttentionConfig: T={self.seq_len}, b={self.effective_block_len}, "
                f"N_d={self.num_devices}, {self.num_heads}x{self.head_dim}{window}")


@dataclass
class RingState:
    """Online-softmax accumulator of one device; leading axes index heads."""
    running_max: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray
    rotation_step: int = 0
    num_devices: int = 1


@dataclass
class DeviceBlock:
    """Query/key/value rows owned by one device; ``mask`` is False on padding rows."""
    index: int
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    mask: np.ndarray


class ScoreBufferTracker:
    """
    Thread-safe count of live and peak score-buffer elements.

    Counts are per attention head: a stacked ``(heads, r, c)`` buffer
    registers ``r·c`` elements, the same as one head's ``r×c`` matrix.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.live = 0
        self.peak = 0

    @staticmethod
    def _elements(buf: np.ndarray) -> int:
        return int(np.prod(buf.shape[-2:]))

    def allocate(self, shape, dtype) -> np.ndarray:
        buf = np.empty(shape, dtype=dtype)
        with self._lock:
            self.live += self._elements(buf)
            self.peak = max(self.peak, self.live)
        return buf

    def release(self, buf: np.ndarray):
        with self._lock:
            self.live -= self._elements(buf)

    def reset(self):
        with self._lock:
            self.live = 0
            self.peak = 0


def _scaled_scores(q: np.ndarray, k: np.ndarray, out: np.ndarray) -> np.ndarray:
    np.matmul(q, np.swapaxes(k, -1, -2), out=out)
    out *= 1.0 / math.sqrt(q.shape[-1])
    return out


def _shift(row_max: np.ndarray) -> np.ndarray:
    # rows that have seen only masked keys keep a -inf max; shift those by 0
    return np.where(np.isneginf(row_max), 0, row_max)


def vanilla_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray,
                      tracker: Optional[ScoreBufferTracker] = None) -> np.ndarray:
    """
    softmax(Q·Kᵀ/√d_k)·V with the full score matrix materialized.

    Q may have a different number of rows than K and V (T_q×T_k scores),
    which makes this the oracle for folds over a subset of key blocks.
    """
    if (Q.ndim != 2 or K.ndim != 2 or V.ndim != 2
            or Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]):
        raise DimensionError(f"attention shape mismatch: Q {Q.shape}, K {K.shape}, V {V.shape}")
    tracker = tracker or ScoreBufferTracker()
    scores = tracker.allocate((Q.shape[0], K.shape[0]), np.result_type(Q, K))
    try:
        _scaled_scores(Q, K, scores)
        weights = np.exp(scores - _shift(scores.max(axis=1))[:, None])
        out = (weights @ V) / weights.sum(axis=1)[:, None]
    finally:
        tracker.release(scores)
    return check_finite(out, "vanilla_attention")


def init_state(rows: int, head_dim: int, num_devices: int, dtype=np.float32,
               heads: Optional[int] = None) -> RingState:
    lead = () if heads is None else (heads,)
    return RingState(running_max=np.full(lead + (rows,), -np.inf, dtype=dtype),
                     numerator=np.zeros(lead + (rows, head_dim), dtype=dtype),
                     denominator=np.zeros(lead + (rows,), dtype=dtype),
                     rotation_step=0,
                     num_devices=num_devices)


def blockwise_partial_update(state: RingState,
                             q_i: np.ndarray,
                             k_j: np.ndarray,
                             v_j: np.ndarray,
                             mask_j: Optional[np.ndarray] = None,
                             scores: Optional[np.ndarray] = None) -> RingState:
    """
    Fold one key/value block into the accumulator.

    With S = q_i·k_jᵀ/√d (masked keys at -inf) and m' = max(m, rowmax S):
    numerator and denominator are rescaled by exp(m − m') and the block's
    exp(S − m') contributions are added. Q/K/V may carry leading head axes,
    in which case all heads are folded in one call. ``scores`` is an
    optional ``(…, b, b)`` buffer reused across calls; it is overwritten
    with the block weights.
    """
    if state.rotation_step >= state.num_devices:
        raise ProtocolError(f"ring state already folded all {state.num_devices} blocks")
    if scores is None:
        scores = np.empty(q_i.shape[:-1] + (k_j.shape[-2],), dtype=np.result_type(q_i, k_j))
    _scaled_scores(q_i, k_j, scores)
    if mask_j is not None and not mask_j.all():
        scores[..., ~mask_j] = -np.inf

    new_max = np.maximum(state.running_max, scores.max(axis=-1))
    shift = _shift(new_max)
    weights = np.exp(np.subtract(scores, shift[..., None], out=scores), out=scores)
    block_num = weights @ v_j
    block_den = weights.sum(axis=-1)
    if state.rotation_step == 0:
        numerator, denominator = block_num, block_den
    else:
        correction = np.exp(state.running_max - shift)
        numerator = state.numerator * correction[..., None] + block_num
        denominator = state.denominator * correction + block_den
    return replace(state, running_max=new_max, numerator=numerator, denominator=denominator,
                   rotation_step=state.rotation_step + 1)


def finalize(state: RingState) -> np.ndarray:
    if state.rotation_step == 0:
        raise ProtocolError("ring state finalized before any block was folded in")
    return state.numerator / state.denominator[..., None]


def partition(Q: np.ndarray, K: np.ndarray, V: np.ndarray, cfg: AttentionConfig) -> List[DeviceBlock]:
    """Split (…, T, d) tensors into device blocks, zero-padding the tail block."""
    b, n = cfg.effective_block_len, cfg.num_devices
    pad = n * b - cfg.seq_len
    mask = np.arange(n * b) < cfg.seq_len
    if pad:
        widths = [(0, 0)] * (Q.ndim - 2) + [(0, pad), (0, 0)]
        Q, K, V = (np.pad(t, widths) for t in (Q, K, V))
    return [DeviceBlock(index=i,
                        q=Q[..., i * b:(i + 1) * b, :],
                        k=K[..., i * b:(i + 1) * b, :],
                        v=V[..., i * b:(i + 1) * b, :],
                        mask=mask[i * b:(i + 1) * b])
            for i in range(n)]


class _RingAborted(Exception):
    """Raised in a device whose predecessor failed."""


def _device_loop(block: DeviceBlock,
                 cfg: AttentionConfig,
                 inboxes: List[queue.Queue],
                 barrier: threading.Barrier,
                 tracker: ScoreBufferTracker) -> np.ndarray:
    i = block.index
    n = len(inboxes)
    heads = block.q.shape[0]
    rows = block.q.shape[1]
    dtype = np.result_type(block.q, block.k)
    scores = tracker.allocate((heads, rows, rows), dtype)
    try:
        state = init_state(rows, cfg.head_dim, cfg.num_devices, dtype, heads=heads)
        current = ("kv", block.index, block.k, block.v, block.mask)
        for step in range(cfg.rotations):
            _, _, k, v, mask = current
            state = blockwise_partial_update(state, block.q, k, v, mask, scores=scores)
            if step + 1 < cfg.rotations:
                inboxes[(i + 1) % n].put(current)
                current = inboxes[i].get(timeout=RECEIVE_TIMEOUT)
                if current[0] == "abort":
                    raise _RingAborted(f"device {current[1]} aborted the ring")
        barrier.wait()
    except BaseException:
        barrier.abort()
        inboxes[(i + 1) % n].put(("abort", i, None, None, None))
        raise
    finally:
        tracker.release(scores)
    return finalize(state)


def ring_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray, cfg: AttentionConfig,
                   tracker: Optional[ScoreBufferTracker] = None) -> np.ndarray:
    """
    Exact attention computed by ``cfg.num_devices`` ring workers.

    Q, K and V are (T, d_k) for one head or (heads, T, d_k); devices loop
    all heads in one batched update per rotation, each head with its own b×b
    slice of the device's score buffer.
    A worker failure is raised as :class:`DeviceError` naming the device.
    """
    single_head = Q.ndim == 2
    if single_head:
        Q, K, V = Q[None], K[None], V[None]
    if Q.ndim != 3 or Q.shape != K.shape or Q.shape != V.shape:
        raise DimensionError(f"attention shape mismatch: Q {Q.shape}, K {K.shape}, V {V.shape}")
    if Q.shape[1] != cfg.seq_len or Q.shape[2] != cfg.head_dim:
        raise DimensionError(f"tensors of shape {Q.shape} do not match {cfg}")
    tracker = tracker or ScoreBufferTracker()

    blocks = partition(Q, K, V, cfg)
    n = len(blocks)
    inboxes = [queue.Queue() for _ in range(n)]
    barrier = threading.Barrier(n)
    with ThreadPoolExecutor(max_workers=n, thread_name_prefix="ring-device") as pool:
        futures = [pool.submit(_device_loop, block, cfg, inboxes, barrier, tracker) for block in blocks]
        outputs, failures = [], {}
        for i, future in enumerate(futures):
            try:
                outputs.append(future.result())
            except (_RingAborted, threading.BrokenBarrierError):
                continue
            except Exception as exc:
                failures[i] = exc
    if failures:
        device = min(failures)
        raise DeviceError(device, failures[device]) from failures[device]

    out = np.concatenate(outputs, axis=1)[:, :cfg.seq_len]
    check_finite(out, "ring_attention")
    return out[0] if single_head else out


def peak_score_elements(cfg: AttentionConfig, mode: str = "ring") -> int:
    """Score-buffer elements alive at once: N_d·b² for ring, T² for vanilla."""
    mode = mode.lower()
    if mode == "ring":
        return cfg.num_devices * cfg.effective_block_len ** 2
    if mode == "vanilla":
        return cfg.seq_len ** 2
    raise ArgumentError(f"mode must be 'ring' or 'vanilla', got '{mode}'")


def visibility_mask(cfg: AttentionConfig) -> np.ndarray:
    """T×T boolean map of which keys each query row sees after ``cfg.rotations`` steps."""
    b, n = cfg.effective_block_len, cfg.num_devices
    device = np.arange(cfg.seq_len) // b
    steps = (device[:, None] - device[None, :]) % n
    return steps < cfg.rotations


def attention_map(Q: np.ndarray, K: np.ndarray, cfg: AttentionConfig) -> np.ndarray:
    """Row-normalized attention weights as seen by the ring (global unless windowed)."""
    if Q.ndim != 2 or Q.shape != K.shape or Q.shape[0] != cfg.seq_len:
        raise DimensionError(f"attention map needs matching (T, d) Q and K for {cfg}, got {Q.shape}, {K.shape}")
    scores = np.empty((Q.shape[0], K.shape[0]), dtype=np.result_type(Q, K))
    _scaled_scores(Q, K, scores)
    if cfg.rotations < cfg.num_devices:
        scores[~visibility_mask(cfg)] = -np.inf
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    return check_finite(weights / weights.sum(axis=1, keepdims=True), "attention_map")


def export_attention_map(Q: np.ndarray, K: np.ndarray, cfg: AttentionConfig,
                         path: Union[str, Path]) -> Path:
    """Write the attention map as headerless CSV, one query row per line."""
    if cfg.seq_len > MAX_EXPORT_TOKENS:
        raise ArgumentError(f"refusing to export a {cfg.seq_len}x{cfg.seq_len} map "
                            f"(limit {MAX_EXPORT_TOKENS} tokens)")
    weights = attention_map(Q, K, cfg)
    path = Path(path)
    float_format = "%.9g" if weights.dtype == np.float32 else "%.17g"
    pd.DataFrame(weights).to_csv(path, header=False, index=False, float_format=float_format)
    return path


def plot_attention_map(maps: Union[np.ndarray, Dict[str, np.ndarray]],
                       path: Union[str, Path],
                       title: str = "Attention map") -> Path:
    """Save one or several attention maps side by side as a PNG."""
    if isinstance(maps, np.ndarray):
        maps = {title: maps}
    fig, axes = plt.subplots(1, len(maps), figsize=(4.5 * len(maps), 4), squeeze=False)
    for ax, (name, weights) in zip(axes[0], maps.items()):
        im = ax.imshow(weights, origin="upper", aspect="auto", cmap="viridis")
        ax.set_title(name)
        ax.set_xlabel("key token")
        ax.set_ylabel("query token")
        fig.colorbar(im, ax=ax, fraction=0.046)
    plt.tight_layout()
    path = Path(path)
    plt.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    return path


def compare_attention_maps(Q: np.ndarray, K: np.ndarray, cfg: AttentionConfig,
                           path: Union[str, Path]) -> Path:
    """Plot the full-ring map next to the restricted-window map of ``cfg``."""
    full = replace(cfg, max_rotations=None)
    maps = {"full ring": attention_map(Q, K, full)}
    if cfg.rotations < cfg.num_devices:
        maps[f"window {cfg.rotations}/{cfg.num_devices}"] = attention_map(Q, K, cfg)
    return plot_attention_map(maps, path)
