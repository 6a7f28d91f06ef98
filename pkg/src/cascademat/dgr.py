"""Deformable graph refinement.

Treats feature-map pixels as graph nodes: a zero-initialized 3x3 conv
predicts K fractional neighbor offsets per node, neighbor features are
gathered by bilinear interpolation, and each node is updated by a
softmax-weighted aggregation of projected neighbor features. The whole
refinement can run for several iterations, re-predicting neighbors from the
current features each time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2dLayer, xavier_matrix
from .tensor import (
    Tensor, channel_matmul, constant, maximum, minimum, ordered_sum, relu,
    reshape, sample_bilinear, softmax,
)


@dataclass
class DgrConfig:
    """Hyperparameters of one refinement module."""
    neighbors: int = 5
    iterations: int = 2
    channels: int = 64
    proj_channels: int | None = None  # None means same as channels

    def __post_init__(self):
        if self.neighbors < 1:
            raise ValueError("neighbor count must be >= 1")
        if self.iterations < 1:
            raise ValueError("iteration count must be >= 1")
        if self.channels < 1 or (self.proj_channels or 1) < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def proj(self) -> int:
        return self.proj_channels if self.proj_channels is not None else self.channels


@dataclass
class NeighborField:
    """Per-node neighbor positions and their interpolated features.

    coords: [N,K,2,H,W] absolute (row, col) positions clamped to the image
    rectangle; features: [N,K,C,H,W] gathered from the source map.
    """
    coords: Tensor
    features: Tensor


def base_layout(k: int) -> np.ndarray:
    """Initial neighbor displacement pattern, one (dy, dx) row per slot.

    K=1 is the node itself, K=5 the center plus 4-connected cross, K=9 the
    full 3x3 window; other counts take the 3x3 window in row-major order and
    then grow outward ring by ring.
    """
    if k < 1:
        raise ValueError("neighbor count must be >= 1")
    if k == 1:
        return np.array([[0, 0]], dtype=np.float64)
    if k == 5:
        return np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]],
                        dtype=np.float64)
    offsets = []
    radius = 1
    while len(offsets) < k:
        ring = [(dy, dx)
                for dy in range(-radius, radius + 1)
                for dx in range(-radius, radius + 1)
                if max(abs(dy), abs(dx)) <= radius and (dy, dx) not in offsets]
        offsets.extend(ring)
        radius += 1
    return np.array(offsets[:k], dtype=np.float64)


class DgrParams:
    """Learnable state: one shared offset conv (zero-initialized) plus a
    (W1, W2) projection pair per refinement iteration; an optional shared
    1x1 conv restores the channel count when the projection width differs.
    """

    def __init__(self, cfg: DgrConfig, rng: np.random.Generator):
        c, cp = cfg.channels, cfg.proj
        self.offset_conv = Conv2dLayer(c, 2 * cfg.neighbors, k=3, zero_init=True)
        self.w1 = [Tensor(xavier_matrix(rng, cp, c), requires_grad=True)
                   for _ in range(cfg.iterations)]
        self.w2 = [Tensor(xavier_matrix(rng, cp, c), requires_grad=True)
                   for _ in range(cfg.iterations)]
        self.restore = None
        if cp != c:
            self.restore = Conv2dLayer(cp, c, k=1, rng=rng)

    def named_params(self, prefix: str):
        params = self.offset_conv.named_params(prefix + ".offset")
        for i, (a, b) in enumerate(zip(self.w1, self.w2)):
            params += [(f"{prefix}.w1_{i}", a), (f"{prefix}.w2_{i}", b)]
        if self.restore is not None:
            params += self.restore.named_params(prefix + ".restore")
        return params


def _base_grid(k: int, h: int, w: int) -> np.ndarray:
    """Absolute base positions [1,K,2,H,W]: pixel index plus layout offset."""
    layout = base_layout(k)
    rows = np.arange(h, dtype=np.float64).reshape(1, 1, h, 1)
    cols = np.arange(w, dtype=np.float64).reshape(1, 1, 1, w)
    grid = np.empty((1, k, 2, h, w))
    grid[:, :, 0] = rows + layout[:, 0].reshape(1, k, 1, 1)
    grid[:, :, 1] = cols + layout[:, 1].reshape(1, k, 1, 1)
    return grid


def predict_neighbors(params: DgrParams, x: Tensor, cfg: DgrConfig) -> NeighborField:
    """Predict K neighbor positions per node and gather their features."""
    n, c, h, w = x.shape
    k = cfg.neighbors
    off = params.offset_conv(x)                    # [N,2K,H,W]
    off = reshape(off, (n, k, 2, h, w))
    coords = off + constant(_base_grid(k, h, w))
    limits = constant(np.array([h - 1.0, w - 1.0]).reshape(1, 1, 2, 1, 1))
    coords = minimum(maximum(coords, 0.0), limits)
    return NeighborField(coords=coords, features=sample_bilinear(x, coords))


def refine_step(w1: Tensor, w2: Tensor, x: Tensor, nf: NeighborField) -> Tensor:
    """One attention update: similarity, per-node softmax, weighted sum.

    Reductions over the neighbor axis run in sorted-value order so the
    output is bitwise invariant to permutations of the neighbor slots.
    """
    n, c, h, w = x.shape
    k = nf.features.shape[1]
    q = channel_matmul(x, w1)                      # [N,C',H,W]
    p = channel_matmul(nf.features, w2, axis=2)    # [N,K,C',H,W]
    cp = q.shape[1]
    sim = (reshape(q, (n, 1, cp, h, w)) * p).sum(axis=2)   # [N,K,H,W]
    beta = softmax(sim, axis=1)
    weighted = reshape(beta, (n, k, 1, h, w)) * p
    return relu(ordered_sum(weighted, axis=1))     # [N,C',H,W]


def dgr_forward(params: DgrParams, x: Tensor, cfg: DgrConfig) -> Tensor:
    """Full module: iterate neighbor prediction + refinement, restoring the
    channel count after each step when the projection width differs."""
    out = x
    for it in range(cfg.iterations):
        nf = predict_neighbors(params, out, cfg)
        out = refine_step(params.w1[it], params.w2[it], out, nf)
        if params.restore is not None:
            out = params.restore(out)
    return out


def count_dgr_params(cfg: DgrConfig) -> int:
    """Exact learnable-scalar count of one module under this parameterization."""
    c, cp, k = cfg.channels, cfg.proj, cfg.neighbors
    offset = 3 * 3 * c * 2 * k + 2 * k
    projections = cfg.iterations * 2 * cp * c
    restore = 0 if cp == c else cp * c + c
    return offset + projections + restore
