"""Dense (height, width, channels) tensors and the numeric kernels on them.

A "Tensor3" here is simply a float64 ``numpy.ndarray`` of shape ``(H, W, C)``.
Every convolution-like kernel is a correlation (no kernel flip), matching
what deep-learning frameworks call convolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

INTERP_METHODS = ("nearest", "bilinear", "bicubic")


def as_tensor3(x) -> np.ndarray:
    """Coerce ``x`` to a float64 (H, W, C) array; 2-D input gets one channel."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"expected a 2-D or 3-D array, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
    return arr


def _require_single_channel(x: np.ndarray, what: str) -> None:
    if x.shape[2] != 1:
        raise ShapeError(f"{what} must be single-channel, got shape {x.shape}")


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Filters of one convolutional layer.

    ``weights`` has shape (K, h, w, C): K filters of h x w x C taps.
    """

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4 or min(w.shape) < 1:
            raise ShapeError(f"filter weights must be (K, h, w, C), got {w.shape}")
        b = np.zeros(w.shape[0]) if self.biases is None else np.asarray(self.biases, dtype=np.float64)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"expected {w.shape[0]} biases, got shape {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @classmethod
    def from_filters(cls, filters, biases=None) -> "FilterBank":
        filters = [as_tensor3(f) for f in filters]
        dims = {f.shape for f in filters}
        if len(dims) != 1:
            raise ShapeError(f"all filters in a bank must share dimensions, got {sorted(dims)}")
        return cls(np.stack(filters), biases)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.weights[k]

    @property
    def filter_shape(self) -> tuple[int, int, int]:
        return self.weights.shape[1:]


def correlate_valid(x, bank: FilterBank, stride: int = 1, use_bias: bool = True) -> np.ndarray:
    """Valid-mode correlation of ``x`` with every filter of ``bank``.

    ``out[i, j, k] = sum_{a,b,c} x[i*s + a, j*s + b, c] * f_k[a, b, c] (+ bias_k)``
    """
    x = as_tensor3(x)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    h, w, c = bank.filter_shape
    if x.shape[2] != c or h > x.shape[0] or w > x.shape[1]:
        raise ShapeError(f"shape mismatch: input {x.shape} vs filter {(h, w, c)}")
    windows = sliding_window_view(x, (h, w), axis=(0, 1))[::stride, ::stride]
    # windows: (Ho, Wo, C, h, w); weights: (K, h, w, C)
    out = np.tensordot(windows, bank.weights, axes=([3, 4, 2], [1, 2, 3]))
    if use_bias:
        out = out + bank.biases
    return out


def correlate_batch(x, bank: FilterBank, stride: int = 1, use_bias: bool = True) -> np.ndarray:
    """``correlate_valid`` applied to every tensor of an (N, H, W, C) batch."""
    x = np.asarray(x, dtype=np.float64)
    h, w, c = bank.filter_shape
    if x.ndim != 4 or x.shape[3] != c or h > x.shape[1] or w > x.shape[2]:
        raise ShapeError(f"shape mismatch: batch {x.shape} vs filter {(h, w, c)}")
    windows = sliding_window_view(x, (h, w), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(windows, bank.weights, axes=([4, 5, 3], [1, 2, 3]))
    if use_bias:
        out = out + bank.biases
    return out


def substitute(fmap, filt) -> np.ndarray:
    """Paste ``filt`` scaled by each pixel of ``fmap``, adding where copies overlap.

    Both arguments are single-channel; the result is (H + h - 1, W + w - 1, 1),
    which is the full discrete convolution of the two planes.
    """
    fmap = as_tensor3(fmap)
    filt = as_tensor3(filt)
    _require_single_channel(fmap, "substitution map")
    _require_single_channel(filt, "substitution filter")
    return substitute_bank(fmap, filt[None, :, :, :])


def substitute_bank(maps, weights) -> np.ndarray:
    """Channel-summed substitution of a multi-channel map through a filter bank.

    ``maps`` is (..., H, W, J) and ``weights`` is (J, h, w, C): one filter per map
    channel. Output channel c is ``sum_j substitute(maps[..., j], weights[j, ..., c])``.
    """
    maps = np.asarray(maps, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if maps.ndim < 3 or weights.ndim != 4 or maps.shape[-1] != weights.shape[0]:
        raise ShapeError(f"cannot substitute bank {weights.shape} into map {maps.shape}")
    H, W = maps.shape[-3:-1]
    _, h, w, C = weights.shape
    out = np.zeros(maps.shape[:-3] + (H + h - 1, W + w - 1, C))
    for a in range(h):
        for b in range(w):
            out[..., a:a + H, b:b + W, :] += maps @ weights[:, a, b, :]
    return out


def max_pool(x) -> np.ndarray:
    """Max over non-overlapping 2x2 windows."""
    x = as_tensor3(x)
    H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max pooling needs even height and width, got {x.shape}")
    return x.reshape(H // 2, 2, W // 2, 2, C).max(axis=(1, 3))


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor3(x), 0.0)


def softmax(x) -> np.ndarray:
    x = as_tensor3(x)
    if x.shape[:2] != (1, 1):
        raise ShapeError(f"softmax expects 1x1 spatial extent, got {x.shape}")
    e = np.exp(x - x.max())
    return e / e.sum()


def _catmull_rom(d: np.ndarray, a: float = -0.5) -> np.ndarray:
    d = np.abs(d)
    near = (a + 2) * d**3 - (a + 3) * d**2 + 1
    far = a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


@lru_cache(maxsize=None)
def interp_matrix(n: int, method: str) -> np.ndarray:
    """(2n, n) matrix mapping a length-n signal to its 2x upsampled version.

    Output sample i reads the input at position (i + 0.5) / 2 - 0.5; taps that
    fall outside [0, n) are clamped to the edge sample.
    """
    if method not in INTERP_METHODS:
        raise ValueError(f"unknown interpolation method {method!r}, expected one of {INTERP_METHODS}")
    pos = (np.arange(2 * n) + 0.5) / 2 - 0.5
    m = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    if method == "nearest":
        idx = np.ceil(pos - 0.5).astype(int)  # round half down
        m[rows, np.clip(idx, 0, n - 1)] = 1.0
    elif method == "bilinear":
        lo = np.floor(pos).astype(int)
        t = pos - lo
        np.add.at(m, (rows, np.clip(lo, 0, n - 1)), 1 - t)
        np.add.at(m, (rows, np.clip(lo + 1, 0, n - 1)), t)
    else:
        lo = np.floor(pos).astype(int)
        for off in (-1, 0, 1, 2):
            tap = lo + off
            np.add.at(m, (rows, np.clip(tap, 0, n - 1)), _catmull_rom(pos - tap))
    m.setflags(write=False)
    return m


def upsample_stack(x, method: str) -> np.ndarray:
    """Upsample axes -3 and -2 of a (..., H, W, C) array by two, channel by channel."""
    x = np.asarray(x, dtype=np.float64)
    mh = interp_matrix(x.shape[-3], method)
    mw = interp_matrix(x.shape[-2], method)
    return np.einsum("ih,...hwc,jw->...ijc", mh, x, mw)


def upsample2x(plane, method: str = "bicubic") -> np.ndarray:
    plane = as_tensor3(plane)
    _require_single_channel(plane, "upsampling input")
    return upsample_stack(plane, method)


def normalize_range(x) -> np.ndarray:
    """Affinely map all samples (jointly over channels) onto [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)
