"""Five-stage coarse-to-fine cascade: per-stage input convs, residual U-block
backbones, deformable graph refinement on the configured stages, inter-stage
feature upsampling/concatenation, and per-stage alpha heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dgr import DgrConfig, DgrParams, count_dgr_params, dgr_forward
from .layers import Conv2dLayer, ConvBlock, RsuBlock, upsample2
from .tensor import Tensor, concat, resize_bilinear


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Stage m (1-based) runs at resolution R / 2^(M-m); stages listed in
    ``dgr_stages`` refine their backbone output with a DGR module before the
    alpha head, the rest feed the backbone output straight through.
    """
    stages: int = 5
    resolution: int = 512
    channels: int = 64
    rsu_depths: tuple = (4, 4, 3, 3, 2)
    dgr: DgrConfig = field(default_factory=DgrConfig)
    dgr_stages: tuple | None = None  # None means 1..M-1
    group_size: int = 32

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one stage")
        if self.dgr_stages is None:
            self.dgr_stages = tuple(range(1, self.stages))
        self.dgr_stages = tuple(sorted(set(int(m) for m in self.dgr_stages)))
        if any(m < 1 or m > self.stages for m in self.dgr_stages):
            raise ValueError(f"dgr_stages outside 1..{self.stages}")
        self.rsu_depths = tuple(int(d) for d in self.rsu_depths)
        if len(self.rsu_depths) != self.stages:
            raise ValueError(
                f"need {self.stages} RSU depths, got {len(self.rsu_depths)}")
        if self.resolution % (1 << (self.stages - 1)):
            raise ValueError(
                f"resolution {self.resolution} not divisible by "
                f"2^{self.stages - 1}")
        for m, (r, d) in enumerate(zip(self.resolution_schedule,
                                       self.rsu_depths), start=1):
            if r % (1 << d):
                raise ValueError(
                    f"stage {m} resolution {r} not divisible by 2^{d}")
        if self.dgr.channels != self.channels:
            raise ValueError("DGR channel count must match feature channels")

    @property
    def resolution_schedule(self) -> tuple:
        return tuple(self.resolution >> (self.stages - m)
                     for m in range(1, self.stages + 1))


def desk_config(**overrides) -> ModelConfig:
    """Small CPU-friendly configuration used by the fast end-to-end checks."""
    base = dict(stages=5, resolution=64, channels=16,
                rsu_depths=(2, 2, 2, 1, 1),
                dgr=DgrConfig(neighbors=5, iterations=2, channels=16))
    base.update(overrides)
    return ModelConfig(**base)


def full_config(**overrides) -> ModelConfig:
    base = dict(stages=5, resolution=512, channels=64,
                rsu_depths=(4, 4, 3, 3, 2),
                dgr=DgrConfig(neighbors=5, iterations=2, channels=64))
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class AlphaPrediction:
    """All per-stage alpha maps; the last one is the network output."""
    per_stage: list

    @property
    def final(self) -> Tensor:
        return self.per_stage[-1]


class CascadeStage:
    def __init__(self, cfg: ModelConfig, m: int, rng: np.random.Generator):
        c = cfg.channels
        c_in = c if m == 1 else 2 * c
        self.index = m
        self.in_conv = ConvBlock(3, c, rng, group_size=cfg.group_size)
        self.rsu = RsuBlock(c_in, c, cfg.rsu_depths[m - 1], rng,
                            group_size=cfg.group_size)
        self.dgr = DgrParams(cfg.dgr, rng) if m in cfg.dgr_stages else None
        self.head = Conv2dLayer(c, 1, k=3, rng=rng)

    def named_params(self, prefix: str):
        params = self.in_conv.named_params(prefix + ".in_conv")
        params += self.rsu.named_params(prefix + ".rsu")
        if self.dgr is not None:
            params += self.dgr.named_params(prefix + ".dgr")
        return params + self.head.named_params(prefix + ".head")


class CascadeModel:
    """The assembled cascade; build with :func:`build` for seeded init."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stages = [CascadeStage(cfg, m, rng)
                       for m in range(1, cfg.stages + 1)]

    def stage_forward(self, m: int, image_m: Tensor, prev_refined):
        """Run stage ``m`` (1-based) on its pyramid level.

        ``prev_refined`` must already be upsampled to this stage's resolution
        (None exactly for stage 1). Returns (alpha_m, refined_m).
        """
        cfg = self.cfg
        r = cfg.resolution_schedule[m - 1]
        if image_m.shape[-2:] != (r, r):
            raise ValueError(
                f"stage {m} expects {r}x{r} input, got {image_m.shape[-2:]}")
        if (prev_refined is None) != (m == 1):
            raise ValueError("prev_refined must be given exactly for stages > 1")
        stage = self.stages[m - 1]
        f_in = stage.in_conv(image_m)
        rsu_in = f_in if prev_refined is None else concat(
            [f_in, prev_refined], axis=1)
        f_out = stage.rsu(rsu_in)
        refined = (dgr_forward(stage.dgr, f_out, cfg.dgr)
                   if stage.dgr is not None else f_out)
        return stage.head(refined), refined

    def forward(self, image: Tensor) -> AlphaPrediction:
        """Run all stages over the bilinear input pyramid."""
        cfg = self.cfg
        r = cfg.resolution
        if image.ndim != 4 or image.shape[1] != 3 or image.shape[-2:] != (r, r):
            raise ValueError(
                f"expected [N,3,{r},{r}] input, got {image.shape}")
        alphas = []
        prev = None
        for m, rm in enumerate(cfg.resolution_schedule, start=1):
            image_m = image if rm == r else resize_bilinear(image, rm, rm)
            alpha_m, refined = self.stage_forward(m, image_m, prev)
            alphas.append(alpha_m)
            if m < cfg.stages:
                prev = upsample2(refined)
        return AlphaPrediction(per_stage=alphas)

    def named_params(self):
        params = []
        for m, stage in enumerate(self.stages, start=1):
            params += stage.named_params(f"stage{m}")
        return params

    def param_dict(self) -> dict:
        return dict(self.named_params())


def build(cfg: ModelConfig, seed: int) -> CascadeModel:
    """Deterministic seeded construction: Xavier init everywhere except the
    DGR offset convs, which start at exactly zero."""
    return CascadeModel(cfg, np.random.default_rng(seed))


def count_params(model: CascadeModel) -> dict:
    """Exact per-stage / DGR / total learnable-scalar counts."""
    per_stage = []
    dgr_total = 0
    for stage in model.stages:
        stage_params = sum(p.size for _, p in stage.named_params("s"))
        per_stage.append(stage_params)
        if stage.dgr is not None:
            dgr_total += count_dgr_params(model.cfg.dgr)
    return {
        "total": sum(per_stage),
        "per_stage": per_stage,
        "dgr_total": dgr_total,
    }
