"""Dense float64 tensor operations used by the autoencoder.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every operation
accepts arbitrary leading batch dimensions in front of the documented
``(channels, height, width)`` layout, so the same code serves single samples
and mini-batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_filters(x: np.ndarray, filters: np.ndarray, channel_axis_of_filters: int) -> None:
    if filters.ndim != 4:
        raise DimensionError(f"filters must be 4-D (Cout, Cin, kh, kw), got shape {filters.shape}")
    kh, kw = filters.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel extents must be odd, got {kh}x{kw}")
    if x.ndim < 3:
        raise DimensionError(f"input must be at least 3-D (C, H, W), got shape {x.shape}")
    if x.shape[-3] != filters.shape[channel_axis_of_filters]:
        raise DimensionError(
            f"input has {x.shape[-3]} channels but filters expect "
            f"{filters.shape[channel_axis_of_filters]}"
        )


def _patches(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Zero-pad the last two axes and return (..., C, H, W, kh, kw) windows."""
    ph, pw = kh // 2, kw // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    xp = np.pad(x, pad)
    return sliding_window_view(xp, (kh, kw), axis=(-2, -1))


def _add_bias(out: np.ndarray, bias, n_channels: int) -> np.ndarray:
    if bias is None:
        return out
    bias = as_tensor(bias)
    if bias.shape != (n_channels,):
        raise DimensionError(f"bias must have shape ({n_channels},), got {bias.shape}")
    return out + bias[:, None, None]


def conv2d_same(x, filters, bias=None) -> np.ndarray:
    """Stride-1 cross-correlation with zero "same" padding.

    ``x`` is ``(..., Cin, H, W)``, ``filters`` is ``(Cout, Cin, kh, kw)`` and
    the result is ``(..., Cout, H, W)``.
    """
    x = as_tensor(x)
    filters = as_tensor(filters)
    _check_filters(x, filters, 1)
    win = _patches(x, *filters.shape[2:])
    out = np.einsum("...ihwkl,oikl->...ohw", win, filters, optimize=True)
    return _add_bias(out, bias, filters.shape[0])


def conv2d_transpose_same(y, filters, bias=None) -> np.ndarray:
    """Linear adjoint of :func:`conv2d_same` (bias excluded), plus ``bias``.

    ``y`` is ``(..., Cout, H, W)`` and the result is ``(..., Cin, H, W)``: the
    full transposed convolution cropped symmetrically back to ``H x W``.
    """
    y = as_tensor(y)
    filters = as_tensor(filters)
    _check_filters(y, filters, 0)
    # Scattering through F and cropping equals correlating with the
    # spatially flipped, channel-swapped kernel.
    flipped = filters[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    win = _patches(y, *filters.shape[2:])
    out = np.einsum("...ohwkl,iokl->...ihw", win, flipped, optimize=True)
    return _add_bias(out, bias, filters.shape[1])


def conv2d_filter_grad(x, upstream, kernel: tuple[int, int]) -> np.ndarray:
    """Gradient of ``<conv2d_same(x, F), upstream>`` with respect to ``F``.

    Leading batch axes are summed over. The same function gives the filter
    gradient of :func:`conv2d_transpose_same` with the roles swapped
    (``x`` = upstream of the transpose, ``upstream`` = its input).
    """
    x = as_tensor(x)
    upstream = as_tensor(upstream)
    if x.shape[:-3] != upstream.shape[:-3] or x.shape[-2:] != upstream.shape[-2:]:
        raise DimensionError(f"incompatible shapes {x.shape} and {upstream.shape}")
    win = _patches(x, *kernel)
    return np.einsum("...ohw,...ihwkl->oikl", upstream, win, optimize=True)


@dataclass(frozen=True)
class PoolIndices:
    """Argmax offsets recorded by :func:`maxpool_time`.

    ``index`` has the pooled map's shape; each entry is the winning offset
    inside its window along the time (last) axis.
    """

    index: np.ndarray
    pool_w: int
    width: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.index.shape


def maxpool_time(x, pool_w: int) -> tuple[np.ndarray, PoolIndices]:
    """Non-overlapping 1 x pool_w max pooling along the last axis.

    The final window may be partial and is pooled over its actual extent.
    Ties go to the first occurrence.
    """
    if pool_w < 1:
        raise ValueError(f"pool_w must be >= 1, got {pool_w}")
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError("cannot pool an empty time axis")
    width = x.shape[-1]
    n_out = -(-width // pool_w)
    pad = n_out * pool_w - width
    if pad:
        x = np.concatenate([x, np.full(x.shape[:-1] + (pad,), -np.inf)], axis=-1)
    windows = x.reshape(x.shape[:-1] + (n_out, pool_w))
    idx = np.argmax(windows, axis=-1)
    pooled = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return pooled, PoolIndices(index=idx, pool_w=pool_w, width=width)


def _check_pool_shape(values: np.ndarray, indices: PoolIndices, out_w: int) -> None:
    if values.shape != indices.shape:
        raise DimensionError(f"pooled shape {values.shape} != index shape {indices.shape}")
    if -(-out_w // indices.pool_w) != values.shape[-1]:
        raise DimensionError(
            f"out_w={out_w} inconsistent with pooled width {values.shape[-1]} "
            f"and pool_w={indices.pool_w}"
        )


def unpool_time(pooled, indices: PoolIndices, out_w: int | None = None) -> np.ndarray:
    """Scatter pooled values back to their recorded argmax positions.

    Every other position is zero. Also serves as the backward pass of
    :func:`maxpool_time`.
    """
    pooled = as_tensor(pooled)
    if out_w is None:
        out_w = indices.width
    _check_pool_shape(pooled, indices, out_w)
    p = indices.pool_w
    out = np.zeros(pooled.shape + (p,))
    np.put_along_axis(out, indices.index[..., None], pooled[..., None], axis=-1)
    out = out.reshape(pooled.shape[:-1] + (pooled.shape[-1] * p,))
    return out[..., :out_w]


def unpool_time_backward(upstream, indices: PoolIndices) -> np.ndarray:
    """Gather the gradient at the recorded argmax positions."""
    upstream = as_tensor(upstream)
    p = indices.pool_w
    n_out = indices.shape[-1]
    if upstream.shape[-1] != indices.width or upstream.shape[:-1] != indices.shape[:-1]:
        raise DimensionError(f"upstream shape {upstream.shape} does not match pooling record")
    pad = n_out * p - indices.width
    if pad:
        upstream = np.concatenate([upstream, np.zeros(upstream.shape[:-1] + (pad,))], axis=-1)
    windows = upstream.reshape(upstream.shape[:-1] + (n_out, p))
    return np.take_along_axis(windows, indices.index[..., None], axis=-1)[..., 0]


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, upstream) -> np.ndarray:
    """Pass ``upstream`` where ``x > 0``; the subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    return np.where(x > 0, as_tensor(upstream), 0.0)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one element at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x).copy()
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near element {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
