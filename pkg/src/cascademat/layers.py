"""Neural building blocks: conv+GN+relu blocks, group normalization, and the
residual U-shaped encoder-decoder used as the backbone of every cascade stage.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor, avg_pool2, concat, conv2d, relu, reshape, resize_bilinear,
)

GN_EPS = 1e-5
GN_GROUP_SIZE = 32


def xavier_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    fan_in, fan_out = c_in * k * k, c_out * k * k
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(c_out, c_in, k, k))


def xavier_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               group_size: int = GN_GROUP_SIZE, eps: float = GN_EPS) -> Tensor:
    """Normalize to zero mean / unit variance per (sample, channel group).

    Channels split into groups of ``group_size``; a channel count below the
    group size collapses to a single group. Other non-divisible counts are
    rejected.
    """
    n, c, h, w = x.shape
    if c < group_size:
        groups = 1
    elif c % group_size == 0:
        groups = c // group_size
    else:
        raise ValueError(f"{c} channels not divisible into groups of {group_size}")
    xg = reshape(x, (n, groups, (c // groups) * h * w))
    mu = xg.mean(axis=2, keepdims=True)
    centered = xg - mu
    var = (centered * centered).mean(axis=2, keepdims=True)
    xhat = centered * ((var + eps) ** -0.5)
    xhat = reshape(xhat, (n, c, h, w))
    return xhat * reshape(gamma, (1, c, 1, 1)) + reshape(beta, (1, c, 1, 1))


def downsample2(x: Tensor) -> Tensor:
    """Exact x1/2 spatial scaling by 2x2 mean pooling."""
    return avg_pool2(x)


def upsample2(x: Tensor) -> Tensor:
    """Exact x2 spatial scaling by bilinear interpolation."""
    return resize_bilinear(x, 2 * x.shape[-2], 2 * x.shape[-1])


class Conv2dLayer:
    """Plain convolution (no normalization, no activation)."""

    def __init__(self, c_in, c_out, k=3, rng=None, zero_init=False, dilation=1):
        if zero_init:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = xavier_conv(rng, c_out, c_in, k)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.dilation = int(dilation)
        self.padding = self.dilation * (k // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias,
                      padding=self.padding, dilation=self.dilation)

    def named_params(self, prefix: str):
        return [(prefix + ".weight", self.weight), (prefix + ".bias", self.bias)]


class ConvBlock:
    """3x3 conv -> group norm -> relu; spatial size preserved (pad = dilation)."""

    def __init__(self, c_in, c_out, rng, dilation=1, group_size=GN_GROUP_SIZE):
        self.conv = Conv2dLayer(c_in, c_out, k=3, rng=rng, dilation=dilation)
        self.gamma = Tensor(np.ones(c_out), requires_grad=True)
        self.beta = Tensor(np.zeros(c_out), requires_grad=True)
        self.group_size = group_size

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv(x)
        return relu(group_norm(h, self.gamma, self.beta, self.group_size))

    def named_params(self, prefix: str):
        return (self.conv.named_params(prefix + ".conv")
                + [(prefix + ".gamma", self.gamma), (prefix + ".beta", self.beta)])


class RsuBlock:
    """Residual U-block: encoder/decoder with skip connections at every level,
    two dilated blocks at the bottom, and a 1x1 residual projection of the
    block input added to the decoder output. Output resolution equals input
    resolution for any depth the input can support (spatial size divisible by
    2^depth).
    """

    def __init__(self, c_in, c_out, depth, rng, group_size=GN_GROUP_SIZE, mid=None):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = int(depth)
        self.mid = int(mid) if mid is not None else max(c_out // 2, 4)
        self.input_block = ConvBlock(c_in, c_out, rng, group_size=group_size)
        self.encoders = [ConvBlock(c_out, self.mid, rng, group_size=group_size)]
        self.encoders += [ConvBlock(self.mid, self.mid, rng, group_size=group_size)
                          for _ in range(self.depth - 1)]
        self.bottom = [ConvBlock(self.mid, self.mid, rng, dilation=2,
                                 group_size=group_size) for _ in range(2)]
        # decoders[i] consumes the skip from encoders[i]; index 0 is shallowest
        self.decoders = [ConvBlock(2 * self.mid, c_out, rng, group_size=group_size)]
        self.decoders += [ConvBlock(2 * self.mid, self.mid, rng, group_size=group_size)
                          for _ in range(self.depth - 1)]
        self.proj = Conv2dLayer(c_in, c_out, k=1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2], x.shape[-1]
        step = 1 << self.depth
        if h < step or w < step or h % step or w % step:
            raise ValueError(
                f"input {h}x{w} cannot be downsampled {self.depth} times")
        out = self.input_block(x)
        skips = []
        for enc in self.encoders:
            out = enc(out)
            skips.append(out)
            out = downsample2(out)
        for blk in self.bottom:
            out = blk(out)
        for i in reversed(range(self.depth)):
            out = upsample2(out)
            out = self.decoders[i](concat([out, skips[i]], axis=1))
        return out + self.proj(x)

    def named_params(self, prefix: str):
        params = self.input_block.named_params(prefix + ".input")
        for i, enc in enumerate(self.encoders):
            params += enc.named_params(f"{prefix}.enc{i}")
        for i, blk in enumerate(self.bottom):
            params += blk.named_params(f"{prefix}.bottom{i}")
        for i, dec in enumerate(self.decoders):
            params += dec.named_params(f"{prefix}.dec{i}")
        return params + self.proj.named_params(prefix + ".proj")
