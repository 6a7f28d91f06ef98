"""Training objective: per-stage alpha prediction loss plus compositional and
gradient losses on the final stage. Predictions are clipped to [0,1] before
every loss term; all terms are built from tape ops, so the total
backpropagates end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Tensor, absolute, clamp, concat, maximum, power, resize_bilinear,
)

GRAD_NORM_EPS = 1e-6


@dataclass
class LossWeights:
    """Eq-style weighting: one weight per non-final stage's alpha term, plus
    compositional and gradient weights for the final stage."""
    alpha: tuple | None = None  # length M-1; None means all ones
    comp: float = 1.0
    grad: float = 1.0

    def __post_init__(self):
        if self.comp < 0 or self.grad < 0:
            raise ValueError("loss weights must be >= 0")
        if self.alpha is not None:
            self.alpha = tuple(float(w) for w in self.alpha)
            if any(w < 0 for w in self.alpha):
                raise ValueError("loss weights must be >= 0")

    def alpha_for(self, stages: int) -> tuple:
        if self.alpha is None:
            return (1.0,) * (stages - 1)
        if len(self.alpha) != stages - 1:
            raise ValueError(
                f"need {stages - 1} alpha weights, got {len(self.alpha)}")
        return self.alpha


@dataclass
class LossReport:
    """Scalar tensors for each component; ``total`` carries the graph."""
    alpha: list
    comp: Tensor
    grad: Tensor
    total: Tensor

    def as_floats(self) -> dict:
        return {
            "alpha": [t.item() for t in self.alpha],
            "comp": self.comp.item(),
            "grad": self.grad.item(),
            "total": self.total.item(),
        }


def alpha_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean absolute difference after clipping the prediction to [0,1]."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return absolute(clamp(pred, 0.0, 1.0) - gt).mean()


def comp_loss(alpha: Tensor, image: Tensor, fg: Tensor, bg: Tensor) -> Tensor:
    """Mean reconstruction error of re-compositing with the predicted alpha,
    averaged over pixels and color channels."""
    if image.shape != fg.shape or image.shape != bg.shape:
        raise ValueError("image/fg/bg shapes differ")
    if alpha.shape[-2:] != image.shape[-2:] or alpha.shape[0] != image.shape[0]:
        raise ValueError(f"alpha {alpha.shape} does not match image {image.shape}")
    a = clamp(alpha, 0.0, 1.0)
    residual = image - a * fg - (1.0 - a) * bg
    return absolute(residual).mean()


def _normalized_gradient(x: Tensor):
    """Forward first differences (replicate boundary), divided per sample by
    the max gradient magnitude (floored at GRAD_NORM_EPS)."""
    dy = concat([x[:, :, 1:, :], x[:, :, -1:, :]], axis=2) - x
    dx = concat([x[:, :, :, 1:], x[:, :, :, -1:]], axis=3) - x
    mag_sq = dy * dy + dx * dx
    norm = power(maximum(mag_sq.max(axis=(1, 2, 3), keepdims=True),
                         GRAD_NORM_EPS ** 2), 0.5)
    return dy / norm, dx / norm


def grad_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean L1 distance between the normalized gradient fields."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    pdy, pdx = _normalized_gradient(clamp(pred, 0.0, 1.0))
    gdy, gdx = _normalized_gradient(gt)
    return (absolute(pdy - gdy) + absolute(pdx - gdx)).mean()


def _batched(t: Tensor) -> Tensor:
    return t.reshape((1,) + t.shape) if t.ndim == 3 else t


def total_loss(preds, sample, weights: LossWeights | None = None) -> LossReport:
    """Weighted sum: alpha loss at every stage (ground truth resized to the
    stage resolution), compositional and gradient losses on the final stage.

    ``sample`` is anything exposing image/fg/bg/alpha tensors, either
    unbatched [C,H,W] or batched [N,C,H,W].
    """
    image, fg, bg = _batched(sample.image), _batched(sample.fg), _batched(sample.bg)
    gt_alpha = _batched(sample.alpha)
    weights = weights or LossWeights()
    stages = len(preds.per_stage)
    alpha_w = weights.alpha_for(stages)
    alpha_terms = []
    for pred_m in preds.per_stage:
        h, w = pred_m.shape[-2], pred_m.shape[-1]
        gt_m = (gt_alpha if gt_alpha.shape[-2:] == (h, w)
                else resize_bilinear(gt_alpha, h, w)).detach()
        alpha_terms.append(alpha_loss(pred_m, gt_m))
    comp = comp_loss(preds.final, image, fg, bg)
    grad = grad_loss(preds.final, gt_alpha)
    total = alpha_terms[-1] + weights.comp * comp + weights.grad * grad
    for w, term in zip(alpha_w, alpha_terms[:-1]):
        total = total + w * term
    return LossReport(alpha=alpha_terms, comp=comp, grad=grad, total=total)
