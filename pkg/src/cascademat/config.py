"""Run configuration: JSON-backed, schema-checked settings covering the
architecture, loss weights, and optimizer/training parameters. Unknown keys
are errors, not warnings — silent hyperparameter typos are the classic
reproducibility failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .dgr import DgrConfig
from .losses import LossWeights
from .model import ModelConfig

DESK_PRESET = {
    "model": {
        "stages": 5,
        "resolution": 64,
        "channels": 16,
        "rsu_depths": [2, 2, 2, 1, 1],
        "dgr": {"neighbors": 5, "iterations": 2, "proj_channels": None},
        "dgr_stages": None,
        "group_size": 32,
    },
    "loss": {"alpha_weights": None, "comp_weight": 1.0, "grad_weight": 1.0},
    "train": {
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 2,
        "epochs": 30,
        "seed": 0,
        "dataset": None,
        "checkpoint": None,
        "augment": False,
        "val_fraction": 0.2,
        "early_stop": False,
        "plateau_patience": 5,
        "plateau_tol": 1e-3,
    },
}

FULL_PRESET = {
    "model": {
        "stages": 5,
        "resolution": 512,
        "channels": 64,
        "rsu_depths": [4, 4, 3, 3, 2],
        "dgr": {"neighbors": 5, "iterations": 2, "proj_channels": None},
        "dgr_stages": None,
        "group_size": 32,
    },
    "loss": {"alpha_weights": None, "comp_weight": 1.0, "grad_weight": 1.0},
    "train": {
        "lr": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 2,
        "epochs": 100,
        "seed": 0,
        "dataset": None,
        "checkpoint": None,
        "augment": True,
        "val_fraction": 0.05,
        "early_stop": False,
        "plateau_patience": 5,
        "plateau_tol": 1e-3,
    },
}

PRESETS = {"desk": DESK_PRESET, "full": FULL_PRESET}


def _merge_checked(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ValueError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge_checked(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    model: ModelConfig
    loss: LossWeights
    lr: float
    beta1: float
    beta2: float
    eps: float
    batch_size: int
    epochs: int
    seed: int
    dataset: str | None
    checkpoint: str | None
    augment: bool
    val_fraction: float
    early_stop: bool
    plateau_patience: int
    plateau_tol: float

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    @staticmethod
    def from_dict(raw: dict, preset: str = "desk") -> "RunConfig":
        base = PRESETS[preset]
        merged = _merge_checked(base, raw)
        m = merged["model"]
        dgr = DgrConfig(neighbors=m["dgr"]["neighbors"],
                        iterations=m["dgr"]["iterations"],
                        channels=m["channels"],
                        proj_channels=m["dgr"]["proj_channels"])
        model = ModelConfig(stages=m["stages"], resolution=m["resolution"],
                            channels=m["channels"],
                            rsu_depths=tuple(m["rsu_depths"]),
                            dgr=dgr,
                            dgr_stages=(None if m["dgr_stages"] is None
                                        else tuple(m["dgr_stages"])),
                            group_size=m["group_size"])
        lw = merged["loss"]
        loss = LossWeights(alpha=(None if lw["alpha_weights"] is None
                                  else tuple(lw["alpha_weights"])),
                           comp=lw["comp_weight"], grad=lw["grad_weight"])
        t = merged["train"]
        return RunConfig(model=model, loss=loss, lr=t["lr"], beta1=t["beta1"],
                         beta2=t["beta2"], eps=t["eps"],
                         batch_size=t["batch_size"], epochs=t["epochs"],
                         seed=t["seed"], dataset=t["dataset"],
                         checkpoint=t["checkpoint"], augment=t["augment"],
                         val_fraction=t["val_fraction"],
                         early_stop=t["early_stop"],
                         plateau_patience=t["plateau_patience"],
                         plateau_tol=t["plateau_tol"])

    def to_dict(self) -> dict:
        m = self.model
        return {
            "model": {
                "stages": m.stages,
                "resolution": m.resolution,
                "channels": m.channels,
                "rsu_depths": list(m.rsu_depths),
                "dgr": {"neighbors": m.dgr.neighbors,
                        "iterations": m.dgr.iterations,
                        "proj_channels": m.dgr.proj_channels},
                "dgr_stages": list(m.dgr_stages),
                "group_size": m.group_size,
            },
            "loss": {
                "alpha_weights": (None if self.loss.alpha is None
                                  else list(self.loss.alpha)),
                "comp_weight": self.loss.comp,
                "grad_weight": self.loss.grad,
            },
            "train": {
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "batch_size": self.batch_size,
                "epochs": self.epochs, "seed": self.seed,
                "dataset": self.dataset, "checkpoint": self.checkpoint,
                "augment": self.augment, "val_fraction": self.val_fraction,
                "early_stop": self.early_stop,
                "plateau_patience": self.plateau_patience,
                "plateau_tol": self.plateau_tol,
            },
        }


def load_config(path=None, preset: str = "desk", overrides: dict | None = None):
    """Preset defaults, overridden by the config file, then by explicit
    override entries (CLI flags)."""
    raw = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValueError(f"config {path} must hold a JSON object")
    if overrides:
        raw = _merge_checked(_merge_checked(PRESETS[preset], raw), overrides)
    return RunConfig.from_dict(raw, preset=preset)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2)
                          + "\n", encoding="utf-8")
