"""
Dense tensor kernels.

Tensors are plain numpy arrays of rank at most 3 in float32 (default) or
float64. Every kernel checks its output for NaN/Inf and raises
:class:`~ringformer.errors.NumericError` naming the kernel instead of
letting non-finite values travel further down the pipeline.
"""

from typing import Dict, Iterable, NamedTuple, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ringformer.errors import ConfigError, DimensionError, NumericError

DEFAULT_DTYPE = np.float32
PRECISIONS = {"float32": np.float32, "float64": np.float64}

ArrayLike = Union[np.ndarray, list, float]


def resolve_dtype(precision: Union[str, np.dtype, type, None]) -> np.dtype:
    """Map a precision name ("float32"/"float64") or dtype to a numpy dtype."""
    if precision is None:
        return np.dtype(DEFAULT_DTYPE)
    if isinstance(precision, str):
        if precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got '{precision}'")
        return np.dtype(PRECISIONS[precision])
    dtype = np.dtype(precision)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported tensor dtype {dtype}")
    return dtype


def as_tensor(x: ArrayLike, dtype=None) -> np.ndarray:
    """Return ``x`` as a contiguous float tensor of rank <= 3.

    Float inputs keep their precision unless ``dtype`` is given; anything
    else is cast to the default 32-bit type.
    """
    arr = np.asarray(x)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
    arr = np.ascontiguousarray(arr, dtype=resolve_dtype(dtype))
    if arr.ndim > 3:
        raise DimensionError(f"tensors have rank <= 3, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(where)
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of an m×k and a k×n tensor."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    check_finite(x, "softmax_rows input")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return check_finite(e / e.sum(axis=-1, keepdims=True), "softmax_rows")


def linear(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """``x @ weight + bias`` with ``weight`` stored as (in_features, out_features)."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return check_finite(out, "linear")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def swish(x: np.ndarray) -> np.ndarray:
    return check_finite(x * expit(x), "swish")


def glu(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gated linear unit: first half times sigmoid of the second half."""
    if x.shape[axis] % 2:
        raise DimensionError(f"glu needs an even extent along axis {axis}, got shape {x.shape}")
    a, b = np.split(x, 2, axis=axis)
    return check_finite(a * expit(b), "glu")


def leaky_relu(x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def conv1d(x: np.ndarray,
           weight: np.ndarray,
           bias: Optional[np.ndarray] = None,
           stride: int = 1,
           padding: int = 0,
           dilation: int = 1,
           groups: int = 1) -> np.ndarray:
    """
    1-D cross-correlation.

    Args:
        x: Input of shape (C_in, L), or (N, C_in, L) for a batch of independent rows.
        weight: Kernel of shape (C_out, C_in/groups, K).
        bias: Optional per-output-channel offset of shape (C_out,).
        stride: Step between output samples.
        padding: Symmetric zero padding on both ends.
        dilation: Spacing between kernel taps.
        groups: Number of channel groups; C_in and C_out must both divide by it.

    Returns:
        Output of shape (C_out, L_out) (or (N, C_out, L_out)) with
        L_out = floor((L + 2*padding - dilation*(K-1) - 1)/stride) + 1.

    Raises:
        DimensionError: If the kernel does not match the input or is longer than it.
        ConfigError: If stride, padding, dilation or groups are invalid.
    """
    if x.ndim not in (2, 3) or weight.ndim != 3:
        raise DimensionError(f"conv1d expects x (C, L) or (N, C, L) and a rank-3 kernel, got {x.shape} and {weight.shape}")
    c_in, length = x.shape[-2:]
    c_out, c_per_group, k = weight.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigError(f"conv1d groups={groups} does not divide C_in={c_in} and C_out={c_out}")
    if c_per_group * groups != c_in:
        raise DimensionError(f"conv1d kernel {weight.shape} does not match input channels {c_in} with groups={groups}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ConfigError(f"conv1d needs stride >= 1, dilation >= 1, padding >= 0 (got {stride}, {dilation}, {padding})")
    span = dilation * (k - 1) + 1
    if length + 2 * padding < span:
        raise DimensionError(f"conv1d input length {length} with padding {padding} is shorter than kernel span {span}")

    pad_width = [(0, 0)] * (x.ndim - 1) + [(padding, padding)]
    padded = np.pad(x, pad_width) if padding else x
    # (..., C_in, L_out, K)
    windows = sliding_window_view(padded, span, axis=-1)[..., ::stride, ::dilation]
    lead = windows.shape[:-3]
    l_out = windows.shape[-2]
    if groups == 1:
        out = np.moveaxis(np.tensordot(windows, weight, axes=([-3, -1], [1, 2])), -1, -2)
    else:
        windows = windows.reshape(*lead, groups, c_per_group, l_out, k)
        kernel = weight.reshape(groups, c_out // groups, c_per_group, k)
        out = np.einsum("...gclk,gock->...gol", windows, kernel)
        out = out.reshape(*lead, c_out, l_out)
    if bias is not None:
        out = out + bias[:, None]
    return check_finite(np.ascontiguousarray(out), "conv1d")


def conv_transpose1d(x: np.ndarray,
                     weight: np.ndarray,
                     bias: Optional[np.ndarray] = None,
                     stride: int = 1,
                     padding: int = 0) -> np.ndarray:
    """Transposed 1-D convolution; ``weight`` has shape (C_in, C_out, K).

    L_out = (L - 1)*stride - 2*padding + K.
    """
    if x.ndim != 2 or weight.ndim != 3 or x.shape[0] != weight.shape[0]:
        raise DimensionError(f"conv_transpose1d shape mismatch: input {x.shape}, kernel {weight.shape}")
    if x.shape[1] < 1:
        raise DimensionError("conv_transpose1d needs at least one input sample")
    c_in, length = x.shape
    _, c_out, k = weight.shape
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv_transpose1d needs stride >= 1 and padding >= 0 (got {stride}, {padding})")
    l_out = (length - 1) * stride - 2 * padding + k
    if l_out <= 0:
        raise ConfigError(f"conv_transpose1d output length {l_out} is not positive "
                          f"(L={length}, stride={stride}, padding={padding}, K={k})")

    # (C_out, K, L): contribution of input sample l to output tap l*stride + k
    taps = np.einsum("il,iok->okl", x, weight, optimize=True)
    full = np.zeros((c_out, (length - 1) * stride + k), dtype=taps.dtype)
    span = stride * (length - 1) + 1
    for tap in range(k):
        full[:, tap:tap + span:stride] += taps[:, tap, :]
    out = full[:, padding:padding + l_out]
    if bias is not None:
        out = out + bias[:, None]
    return check_finite(np.ascontiguousarray(out), "conv_transpose1d")


def conv2d_column(x: np.ndarray,
                  weight: np.ndarray,
                  bias: Optional[np.ndarray] = None,
                  stride: int = 1,
                  padding: int = 0) -> np.ndarray:
    """2-D convolution with a (K×1) kernel over a (C, H, W) tensor.

    Columns never mix, so this is a batched 1-D convolution along H.
    ``weight`` has shape (C_out, C_in, K, 1).
    """
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[3] != 1:
        raise DimensionError(f"conv2d_column expects (C, H, W) input and (C_out, C_in, K, 1) kernel, "
                             f"got {x.shape} and {weight.shape}")
    columns = np.ascontiguousarray(x.transpose(2, 0, 1))  # (W, C, H)
    out = conv1d(columns, weight[..., 0], bias, stride=stride, padding=padding)
    return np.ascontiguousarray(out.transpose(1, 2, 0))


def snake(x: np.ndarray, alpha: Union[float, np.ndarray]) -> np.ndarray:
    """Snake activation ``x + sin²(alpha·x)/alpha``.

    ``alpha`` is a scalar or one value per channel (first axis of ``x``).
    """
    alpha = np.asarray(alpha, dtype=x.dtype)
    if np.any(alpha <= 0):
        raise ConfigError(f"snake alpha must be positive, got min {alpha.min()}")
    if alpha.ndim == 1:
        if alpha.shape[0] != x.shape[0]:
            raise DimensionError(f"snake has {alpha.shape[0]} alphas for {x.shape[0]} channels")
        alpha = alpha.reshape((-1,) + (1,) * (x.ndim - 1))
    out = x + np.sin(alpha * x) ** 2 / alpha
    return check_finite(out, "snake")


def layer_norm(x: np.ndarray,
               gain: Optional[np.ndarray] = None,
               bias: Optional[np.ndarray] = None,
               eps: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    if x.shape[-1] < 1:
        raise DimensionError("layer_norm needs a non-empty last axis")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    out = centered / np.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return check_finite(out, "layer_norm")


class ParamSpec(NamedTuple):
    """Name, shape and initializer of one learnable array."""
    name: str
    shape: Tuple[int, ...]
    init: str = "uniform"   # "uniform" (±1/√fan_in), "ones" or "zeros"
    fan_in: int = 1


def init_params(specs: Iterable[ParamSpec], rng: np.random.Generator, dtype=None) -> Dict[str, np.ndarray]:
    """Materialize ``specs`` in order; the same generator state gives the same arrays."""
    dtype = resolve_dtype(dtype)
    arrays = {}
    for spec in specs:
        if spec.init == "ones":
            arr = np.ones(spec.shape)
        elif spec.init == "zeros":
            arr = np.zeros(spec.shape)
        elif spec.init == "uniform":
            bound = 1.0 / np.sqrt(spec.fan_in)
            arr = rng.uniform(-bound, bound, size=spec.shape)
        else:
            raise ConfigError(f"unknown initializer '{spec.init}' for {spec.name}")
        arrays[spec.name] = arr.astype(dtype)
    return arrays
