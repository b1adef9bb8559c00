"""Primitive operators: convolutions, activations, pooling, residual add.

All operators are pure functions over (b, h, w, c) float32 tensors and are
deterministic: the heavy lifting is a single vectorized numpy expression
per tap or a single matmul, so repeated evaluation on identical inputs is
bit-identical.

Padding convention
------------------
SAME padding with ceil division: out = ceil(in / stride) along each
spatial axis.  When the total pad is odd the extra row/column goes on the
bottom/right.  Padded positions contribute zeros, and the multiply-add
counter charges them like any other tap (one MAdd per kernel tap per
output element), which is the convention every published operation count
uses.

Convolution is cross-correlation: no kernel flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatchError, InvalidShapeError, ShapeMismatchError
from .tensor import assert_activation

# Running multiply-add tally.  Incremented by every operator invocation;
# read it around a forward pass to get the exact executed MAdd count.
_MADDS = 0


def reset_madd_counter() -> None:
    global _MADDS
    _MADDS = 0


def madd_count() -> int:
    return _MADDS


def _charge_madds(n: int) -> None:
    global _MADDS
    _MADDS += int(n)


@dataclass
class Conv2dParams:
    """Dense convolution: weights (k, k, d_in, d_out), per-output-channel bias.

    Any normalization is assumed pre-folded: the folded scale lives inside
    the weights, so the bias vector is the only extra per-channel term.
    """

    kernel: int
    stride: int
    in_channels: int
    out_channels: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel not in (1, 3):
            raise InvalidShapeError(f"conv kernel must be 1 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise InvalidShapeError(f"conv stride must be 1 or 2, got {self.stride}")
        expect = (self.kernel, self.kernel, self.in_channels, self.out_channels)
        if tuple(self.weights.shape) != expect:
            raise InvalidShapeError(
                f"conv weights must have shape {expect}, got {self.weights.shape}"
            )
        if self.bias.shape != (self.out_channels,):
            raise InvalidShapeError(
                f"conv bias must have shape ({self.out_channels},), got {self.bias.shape}"
            )
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)


@dataclass
class DepthwiseParams:
    """Depthwise convolution: one (k, k) filter per channel, no channel mixing."""

    kernel: int
    stride: int
    channels: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel not in (1, 3):
            raise InvalidShapeError(f"depthwise kernel must be 1 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise InvalidShapeError(f"depthwise stride must be 1 or 2, got {self.stride}")
        expect = (self.kernel, self.kernel, self.channels)
        if tuple(self.weights.shape) != expect:
            raise InvalidShapeError(
                f"depthwise weights must have shape {expect}, got {self.weights.shape}"
            )
        if self.bias.shape != (self.channels,):
            raise InvalidShapeError(
                f"depthwise bias must have shape ({self.channels},), got {self.bias.shape}"
            )
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)


def same_pad_amounts(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(out_size, pad_begin, pad_end) for SAME padding along one axis."""
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    beg = total // 2
    return out, beg, total - beg


def _pad_same(x: np.ndarray, kernel: int, stride: int):
    b, h, w, c = x.shape
    oh, pt, pb = same_pad_amounts(h, kernel, stride)
    ow, pl, pr = same_pad_amounts(w, kernel, stride)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return x, oh, ow


def conv2d(x: np.ndarray, p: Conv2dParams) -> np.ndarray:
    """Cross-correlation with SAME padding; output (b, ceil(h/s), ceil(w/s), d_out)."""
    assert_activation(x, "conv2d input")
    b, h, w, c = x.shape
    if c != p.in_channels:
        raise ChannelMismatchError(
            f"conv2d expects {p.in_channels} input channels, got {c}"
        )
    k, s = p.kernel, p.stride
    if k == 1:
        view = x[:, ::s, ::s, :]
        oh, ow = view.shape[1], view.shape[2]
        flat = view.reshape(-1, c)
        out = flat @ p.weights.reshape(c, p.out_channels)
    else:
        xp, oh, ow = _pad_same(x, k, s)
        # im2col: one strided slice per tap, stacked on a new trailing axis.
        cols = np.empty((b, oh, ow, k * k, c), dtype=np.float32)
        for ky in range(k):
            for kx in range(k):
                cols[:, :, :, ky * k + kx, :] = xp[
                    :, ky : ky + (oh - 1) * s + 1 : s, kx : kx + (ow - 1) * s + 1 : s, :
                ]
        out = cols.reshape(-1, k * k * c) @ p.weights.reshape(k * k * c, p.out_channels)
    _charge_madds(b * oh * ow * k * k * c * p.out_channels)
    out = out + p.bias
    return np.ascontiguousarray(out.reshape(b, oh, ow, p.out_channels), dtype=np.float32)


def depthwise_conv(x: np.ndarray, p: DepthwiseParams) -> np.ndarray:
    """Per-channel spatial filter; output channel c depends only on input channel c."""
    assert_activation(x, "depthwise input")
    b, h, w, c = x.shape
    if c != p.channels:
        raise ChannelMismatchError(
            f"depthwise_conv expects {p.channels} channels, got {c}"
        )
    k, s = p.kernel, p.stride
    xp, oh, ow = _pad_same(x, k, s)
    out = np.zeros((b, oh, ow, c), dtype=np.float32)
    for ky in range(k):
        for kx in range(k):
            tap = xp[:, ky : ky + (oh - 1) * s + 1 : s, kx : kx + (ow - 1) * s + 1 : s, :]
            out += tap * p.weights[ky, kx, :]
    _charge_madds(b * oh * ow * k * k * c)
    out += p.bias
    return out


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0); the unclamped rectifier used by the theory lab."""
    return np.maximum(x, np.float32(0.0))


def relu6(x: np.ndarray) -> np.ndarray:
    """Elementwise min(max(x, 0), 6), the low-precision-friendly clamp."""
    return np.minimum(np.maximum(x, np.float32(0.0)), np.float32(6.0))


def global_avgpool(x: np.ndarray) -> np.ndarray:
    """Mean over the full spatial extent, accumulated in float64; (b, 1, 1, c)."""
    assert_activation(x, "avgpool input")
    b, h, w, c = x.shape
    acc = x.astype(np.float64).sum(axis=(1, 2), keepdims=True)
    return (acc / float(h * w)).astype(np.float32)


def add_residual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum of two same-shape tensors (shortcut join)."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"residual add shape mismatch: {a.shape} vs {b.shape}")
    return a + b
