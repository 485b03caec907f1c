"""Depthwise, lightweight, and dynamic convolutions over [n x d] sequences.

All three variants preserve the input shape. The window of width k covers
offsets ``j + 1 - ceil((k+1)/2)`` for j = 0..k-1 (centered for odd k,
left-heavy for even k); causal padding shifts the window so output position i
only reads positions <= i. Out-of-range taps contribute zero.

Lightweight convolution softmax-normalizes each kernel row over its taps and
shares one row across each contiguous group of d/H channels. Dynamic
convolution generates the [H x k] kernel at every position from that
position's input vector through a learned linear map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError, _make, matmul, reshape, softmax


@dataclass
class DepthwiseKernel:
    """One k-tap filter per channel: weight has shape [d, k]."""

    weight: Tensor
    dilation: int = 1

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"depthwise weight must be [d, k], got {self.weight.shape}")
        if self.weight.shape[1] < 1:
            raise ValueError("kernel width must be >= 1")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")

    @property
    def width(self):
        return self.weight.shape[1]


@dataclass
class TiedKernel:
    """H unique rows shared across groups of d/H channels: weight is [H, k]."""

    weight: Tensor
    dilation: int = 1

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"tied weight must be [H, k], got {self.weight.shape}")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")

    @property
    def tying(self):
        return self.weight.shape[0]

    @property
    def width(self):
        return self.weight.shape[1]


@dataclass
class DynamicKernelGenerator:
    """Linear map producing a position-dependent [H x k] kernel.

    The generator weight is stored flattened as [d, H*k]; at position i the
    kernel is softmax over taps of reshape(X_i @ weight, [H, k]).
    """

    weight: Tensor
    tying: int
    width: int
    dilation: int = 1

    def __post_init__(self):
        expected = self.tying * self.width
        if self.weight.ndim != 2 or self.weight.shape[1] != expected:
            raise ShapeError(
                f"generator weight must be [d, H*k] = [d, {expected}], "
                f"got {self.weight.shape}"
            )
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")


@dataclass
class LayerScheduleEntry:
    layer: int
    width: int
    dilation: int = 1


def tap_offsets(k, padding, dilation=1):
    """Sequence-position offsets read by each of the k taps."""
    if padding == "same-zero":
        center = math.ceil((k + 1) / 2)
        return [dilation * (j + 1 - center) for j in range(k)]
    if padding == "causal-left":
        return [dilation * (j + 1 - k) for j in range(k)]
    raise ValueError(f"unknown padding mode: {padding!r}")


def _shift(x, offset):
    """y[i] = x[i + offset] with zero fill outside the sequence."""
    n = x.shape[0]
    y = np.zeros_like(x)
    if offset >= 0:
        if offset < n:
            y[: n - offset] = x[offset:]
    else:
        if -offset < n:
            y[-offset:] = x[: n + offset]
    return y


def _check_input(x, d_expected, what):
    if x.ndim != 2:
        raise ShapeError(f"{what} expects [n, d] input, got {x.shape}")
    n, d = x.shape
    if n < 1:
        raise ShapeError(f"{what} got a zero-length sequence")
    if d_expected is not None and d != d_expected:
        raise ShapeError(
            f"{what} channel mismatch: input has d={d}, kernel serves d={d_expected}"
        )
    return n, d


def depthwise_conv(x, kernel, padding):
    """Per-channel convolution of [n, d] input with a [d, k] kernel."""
    d_k, k = kernel.weight.shape
    n, d = _check_input(x, d_k, "depthwise_conv")
    offsets = tap_offsets(k, padding, kernel.dilation)
    w = kernel.weight
    shifted = [_shift(x.data, o) for o in offsets]
    data = np.zeros_like(x.data)
    for j in range(k):
        data += w.data[:, j] * shifted[j]

    def backward(grad):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for j in range(k):
                dx += _shift(grad * w.data[:, j], -offsets[j])
            x.accumulate_grad(dx)
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for j in range(k):
                dw[:, j] = (grad * shifted[j]).sum(axis=0)
            w.accumulate_grad(dw)

    return _make(data, (x, w), backward)


def channel_group(c, d, tying):
    """Tied-row index for channel c: floor(c * H / d), contiguous groups."""
    return (c * tying) // d


def _tied_conv(x, rows, offsets):
    """Shared-row convolution: rows is a normalized [H, k] kernel tensor."""
    n, d = x.shape
    tying, k = rows.shape
    group = d // tying
    expanded = np.repeat(rows.data, group, axis=0)  # [d, k]
    shifted = [_shift(x.data, o) for o in offsets]
    data = np.zeros_like(x.data)
    for j in range(k):
        data += expanded[:, j] * shifted[j]

    def backward(grad):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for j in range(k):
                dx += _shift(grad * expanded[:, j], -offsets[j])
            x.accumulate_grad(dx)
        if rows.requires_grad:
            dr = np.empty_like(rows.data)
            for j in range(k):
                per_channel = (grad * shifted[j]).sum(axis=0)  # [d]
                dr[:, j] = per_channel.reshape(tying, group).sum(axis=1)
            rows.accumulate_grad(dr)

    return _make(data, (x, rows), backward)


def lightweight_conv(x, kernel, padding):
    """Tied, softmax-normalized depthwise convolution (kernel is [H, k] raw).

    Each tied row is softmax-normalized over its k taps before convolving, so
    every effective kernel sums to one; channel c uses row floor(c*H/d).
    """
    tying, k = kernel.weight.shape
    n, d = _check_input(x, None, "lightweight_conv")
    if d % tying != 0:
        raise ShapeError(f"tying factor H={tying} does not divide d={d}")
    offsets = tap_offsets(k, padding, kernel.dilation)
    rows = softmax(kernel.weight, axis=1)
    return _tied_conv(x, rows, offsets)


def _positionwise_conv(x, kernels, offsets):
    """Convolution with a per-position [n, H, k] kernel tensor."""
    n, d = x.shape
    _, tying, k = kernels.shape
    group = d // tying
    expanded = np.repeat(kernels.data, group, axis=1)  # [n, d, k]
    shifted = [_shift(x.data, o) for o in offsets]
    data = np.zeros_like(x.data)
    for j in range(k):
        data += expanded[:, :, j] * shifted[j]

    def backward(grad):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for j in range(k):
                dx += _shift(grad * expanded[:, :, j], -offsets[j])
            x.accumulate_grad(dx)
        if kernels.requires_grad:
            dk = np.empty_like(kernels.data)
            for j in range(k):
                per = grad * shifted[j]  # [n, d]
                dk[:, :, j] = per.reshape(n, tying, group).sum(axis=2)
            kernels.accumulate_grad(dk)

    return _make(data, (x, kernels), backward)


def dynamic_conv(x, generator, padding):
    """Position-dependent lightweight convolution.

    The kernel used at output position i is the softmax over taps of the
    generator applied to X_i alone, so perturbing other positions never
    changes the kernel at i.
    """
    n, d = _check_input(x, generator.weight.shape[0], "dynamic_conv")
    tying, k = generator.tying, generator.width
    if d % tying != 0:
        raise ShapeError(f"tying factor H={tying} does not divide d={d}")
    offsets = tap_offsets(k, padding, generator.dilation)
    logits = reshape(matmul(x, generator.weight), (n, tying, k))
    kernels = softmax(logits, axis=2)
    return _positionwise_conv(x, kernels, offsets)


DILATED_WIDTHS = [4, 4, 7, 7, 15, 15, 15, 15, 31, 31, 31]


def make_layer_schedule(variant, num_layers, dilation=1):
    """Per-layer kernel widths for a conv stack.

    light/dynamic use width 7 everywhere; dilated uses the growing width
    list, repeating its final entry when the stack is deeper than the list
    (the width list is one entry short for a 12-layer stack).
    """
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if variant in ("light", "dynamic"):
        widths = [7] * num_layers
    elif variant == "dilated":
        widths = list(DILATED_WIDTHS[:num_layers])
        while len(widths) < num_layers:
            widths.append(DILATED_WIDTHS[-1])
    else:
        raise ValueError(f"unknown conv variant: {variant!r}")
    return [
        LayerScheduleEntry(layer=i, width=w, dilation=dilation)
        for i, w in enumerate(widths)
    ]
