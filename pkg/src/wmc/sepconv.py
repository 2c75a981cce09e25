"""Depthwise-separable convolution blocks and the stacked feature extractor.

A block factors convolution into two stages: each input channel is
spatially filtered by its own single-depth kernel (so the kernel count
always equals the input channel count), then a 1x1 stage mixes channels
with a learned linear combination per spatial site.  Convolution here is
cross-correlation (no kernel flip), the usual deep-learning convention.

The extractor stacks a few blocks with relu and 2x2 max-pooling and ends
in global average pooling, standing in for a large pretrained backbone at
desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .rng import SplitMix64
from . import tensor as T
from .tensor import Parameter, Tensor, _op


def _pad_amount(kh, kw, padding):
    if padding == "same":
        return kh // 2, kw // 2
    if padding == "valid":
        return 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


class SepConvBlock:
    """One depthwise + pointwise stage with per-output-channel bias."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1,
                 padding="same", rng: SplitMix64 | None = None, name="sepconv"):
        rng = rng or SplitMix64(0)
        kh = kw = int(kernel_size)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = int(stride)
        self.padding = padding
        scale_dw = np.sqrt(1.0 / (kh * kw))
        scale_pw = np.sqrt(1.0 / in_channels)
        self.depthwise_kernels = Parameter(rng.normal((in_channels, kh, kw), scale_dw),
                                           f"{name}.depthwise")
        # pointwise kernels keep an explicit 1x1 spatial extent
        self.pointwise_kernels = Parameter(
            rng.normal((out_channels, in_channels, 1, 1), scale_pw), f"{name}.pointwise")
        self.bias = Parameter(np.zeros(out_channels), f"{name}.bias")

    def parameters(self):
        return [self.depthwise_kernels, self.pointwise_kernels, self.bias]

    def param_count(self):
        return sum(p.data.size for p in self.parameters())

    def forward(self, x: Tensor) -> Tensor:
        return pointwise_forward(depthwise_forward(x, self), self)


def depthwise_forward(x: Tensor, block: SepConvBlock) -> Tensor:
    """Per-channel spatial cross-correlation; no cross-channel mixing.

    Channel k of the output depends only on input channel k and kernel k.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"depthwise input must be CxHxW, got shape {x.shape}")
    k_in, h, w = x.data.shape
    kernels = block.depthwise_kernels.value
    if k_in != block.in_channels:
        raise DimensionError(
            f"input has {k_in} channels but block expects {block.in_channels}")
    _, kh, kw = kernels.data.shape
    ph, pw = _pad_amount(kh, kw, block.padding)
    s = block.stride
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    hp, wp = xp.shape[1:]
    if hp < kh or wp < kw:
        raise DimensionError(f"spatial dims {h}x{w} too small for {kh}x{kw} kernel")
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    out = np.einsum("khwuv,kuv->khw", windows, kernels.data)
    h_out, w_out = out.shape[1:]

    def back(g):
        dker = np.einsum("khw,khwuv->kuv", g, windows)
        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                dxp[:, u:u + s * h_out:s, v:v + s * w_out:s] += g * kernels.data[:, u:u + 1, v:v + 1]
        dx = dxp[:, ph:ph + h, pw:pw + w] if (ph or pw) else dxp
        return dx, dker

    return _op(out, (x, kernels), back)


def pointwise_forward(maps: Tensor, block: SepConvBlock) -> Tensor:
    """1x1 combination across channels plus bias, via a matrix product."""
    if maps.data.ndim != 3:
        raise DimensionError(f"pointwise input must be CxHxW, got shape {maps.shape}")
    k_in, h, w = maps.data.shape
    if k_in != block.in_channels:
        raise DimensionError(
            f"input has {k_in} channels but block expects {block.in_channels}")
    mix = T.reshape(block.pointwise_kernels.value, (block.out_channels, block.in_channels))
    flat = T.reshape(maps, (k_in, h * w))                      # K x HW
    mixed = T.matmul(mix, flat)                                # K_out x HW
    b = T.expand(T.reshape(block.bias.value, (block.out_channels, 1)),
                 (block.out_channels, h * w))
    return T.reshape(T.add(mixed, b), (block.out_channels, h, w))


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""
    if x.data.ndim != 3:
        raise DimensionError(f"maxpool input must be CxHxW, got shape {x.shape}")
    c, h, w = x.data.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool needs spatial dims >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = x.data[:, :2 * h2, :2 * w2].reshape(c, h2, 2, w2, 2)
    windows = windows.transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    idx = windows.argmax(axis=-1)  # ties resolve to the first maximum
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def back(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros_like(x.data)
        dx[:, :2 * h2, :2 * w2] = (dwin.reshape(c, h2, w2, 2, 2)
                                   .transpose(0, 1, 3, 2, 4)
                                   .reshape(c, 2 * h2, 2 * w2))
        return (dx,)

    return _op(out, (x,), back)


@dataclass
class FeatureExtractorConfig:
    in_channels: int = 3
    channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    kernel_size: int = 3
    global_avg_pool: bool = True
    input_size: int = 224

    def __post_init__(self):
        if len(self.channels) < 1:
            raise ValueError("at least one block required")
        if any(c <= 0 for c in self.channels):
            raise ValueError("channel counts must be positive")

    @property
    def feature_dim(self):
        return self.channels[-1]


class FeatureExtractor:
    """Stack of separable-conv blocks: (sepconv, relu, 2x2 maxpool) x N, then GAP."""

    def __init__(self, config: FeatureExtractorConfig, rng: SplitMix64, name="extractor"):
        self.config = config
        self.blocks = []
        prev = config.in_channels
        for i, ch in enumerate(config.channels):
            self.blocks.append(SepConvBlock(prev, ch, config.kernel_size,
                                            rng=rng, name=f"{name}.block{i}"))
            prev = ch

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def forward(self, image: Tensor) -> Tensor:
        cfg = self.config
        if image.data.ndim != 3 or image.data.shape[0] != cfg.in_channels:
            raise DimensionError(
                f"extractor expects {cfg.in_channels}x{cfg.input_size}x{cfg.input_size} input, "
                f"got shape {image.shape}")
        if image.data.shape[1] != cfg.input_size or image.data.shape[2] != cfg.input_size:
            raise DimensionError(
                f"extractor configured for {cfg.input_size}x{cfg.input_size} input, "
                f"got {image.data.shape[1]}x{image.data.shape[2]}")
        y = image
        for block in self.blocks:
            y = maxpool2x2(T.relu(block.forward(y)))
        if cfg.global_avg_pool:
            c, h, w = y.data.shape
            y = T.mul(T.tsum(T.reshape(y, (c, h * w)), axis=1), 1.0 / (h * w))
        else:
            y = T.reshape(y, (y.data.size,))
        return y
