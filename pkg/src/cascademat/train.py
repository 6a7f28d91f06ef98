"""Training and evaluation loops over a manifest-backed corpus.

Math runs single-threaded for bit-exact reproducibility; every random
decision derives from (seed, epoch[, step]) streams so interrupted runs
resume exactly at epoch boundaries.
"""

from __future__ import annotations

import numpy as np

from .checkpoint import Checkpoint, apply_to_model, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (
    AugmentSpec, SampleBatch, augment, load_record, read_manifest,
)
from .losses import total_loss
from .metrics import evaluate_pair, mean_report
from .model import build
from .optim import Adam
from .tensor import Tensor, resize_bilinear_array


def split_indices(count: int, val_fraction: float, seed: int):
    """Deterministic train/held-out split of sample indices."""
    perm = np.random.default_rng(seed).permutation(count)
    n_val = int(round(count * val_fraction))
    return np.sort(perm[n_val:]).tolist(), np.sort(perm[:n_val]).tolist()


class Corpus:
    """In-memory corpus at the working resolution.

    Keeps the source-resolution fg/bg/alpha for augmentation and a
    pre-composited resized copy for the plain path.
    """

    def __init__(self, root, resolution: int):
        self.root = root
        self.resolution = resolution
        self.samples = [load_record(root, rec) for rec in read_manifest(root)]
        self.resized = [self._resize(s) for s in self.samples]

    def __len__(self):
        return len(self.samples)

    def _resize(self, sample):
        r = self.resolution
        if sample.alpha.shape[-2:] == (r, r):
            fg, bg, alpha = sample.fg.data, sample.bg.data, sample.alpha.data
        else:
            fg = resize_bilinear_array(sample.fg.data, r, r)
            bg = resize_bilinear_array(sample.bg.data, r, r)
            alpha = np.clip(resize_bilinear_array(sample.alpha.data, r, r), 0, 1)
        image = alpha * fg + (1.0 - alpha) * bg
        return {"image": image, "fg": fg, "bg": bg, "alpha": alpha}

    def batch(self, indices, augment_spec=None, rngs=None) -> SampleBatch:
        if augment_spec is None:
            rows = [self.resized[i] for i in indices]
            stack = lambda key: Tensor(np.stack([r[key] for r in rows]))
            return SampleBatch(image=stack("image"), fg=stack("fg"),
                               bg=stack("bg"), alpha=stack("alpha"))
        out = [augment(self.samples[i], augment_spec, rng)
               for i, rng in zip(indices, rngs)]
        return SampleBatch.from_samples(out)


def _checkpoint_tensors(model, adam: Adam) -> dict:
    tensors = {name: p.data for name, p in model.named_params()}
    tensors.update(adam.state_tensors())
    return tensors


def _save(cfg: RunConfig, model, adam: Adam, epoch: int, rng_probe) -> None:
    meta = {
        "epoch": epoch,
        "optimizer_step": adam.step_count,
        "rng_state": rng_probe.bit_generator.state,
    }
    save_checkpoint(cfg.checkpoint, cfg.to_dict(), meta,
                    _checkpoint_tensors(model, adam))


def train(cfg: RunConfig, resume: bool = False, max_steps: int | None = None,
          log=None) -> dict:
    """Run the optimization loop; returns the model and per-step history."""
    if cfg.dataset is None:
        raise ValueError("config has no dataset path")
    corpus = Corpus(cfg.dataset, cfg.model.resolution)
    if len(corpus) == 0:
        raise ValueError(f"dataset at {cfg.dataset} is empty")
    train_idx, val_idx = split_indices(len(corpus), cfg.val_fraction, cfg.seed)
    model = build(cfg.model, cfg.seed)
    adam = Adam(model.param_dict(), lr=cfg.lr, beta1=cfg.beta1,
                beta2=cfg.beta2, eps=cfg.eps)
    start_epoch = 0
    if resume:
        ckpt = load_checkpoint(cfg.checkpoint)
        if ckpt.config["model"] != cfg.to_dict()["model"]:
            raise ValueError("checkpoint architecture differs from config")
        apply_to_model(ckpt, model)
        adam.load_state(ckpt.tensors, ckpt.meta["optimizer_step"])
        start_epoch = int(ckpt.meta["epoch"])

    aug_spec = AugmentSpec.for_resolution(cfg.model.resolution) if cfg.augment else None
    history = []
    epoch_totals = []
    step = 0
    stop = False
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng(cfg.seed + epoch).permutation(train_idx)
        losses_this_epoch = []
        for lo in range(0, len(order), cfg.batch_size):
            indices = order[lo: lo + cfg.batch_size].tolist()
            rngs = [np.random.default_rng([cfg.seed, epoch, i])
                    for i in indices] if aug_spec else None
            batch = corpus.batch(indices, aug_spec, rngs)
            preds = model.forward(batch.image)
            report = total_loss(preds, batch, cfg.loss)
            total = report.total.item()
            if not np.isfinite(total):
                raise FloatingPointError(
                    f"loss diverged (epoch {epoch}, step {step}): {total}")
            adam.zero_grad()
            report.total.backward()
            adam.step()
            entry = {"epoch": epoch, "step": step, **report.as_floats()}
            history.append(entry)
            losses_this_epoch.append(total)
            if log is not None:
                log(f"epoch {epoch:3d} step {step:5d} "
                    f"total {entry['total']:.6f} comp {entry['comp']:.6f} "
                    f"grad {entry['grad']:.6f}")
            step += 1
            if max_steps is not None and step >= max_steps:
                stop = True
                break
        completed = epoch + (0 if stop else 1)
        if cfg.checkpoint is not None:
            _save(cfg, model, adam, completed, np.random.default_rng(cfg.seed))
        if stop:
            break
        epoch_totals.append(float(np.mean(losses_this_epoch)))
        if cfg.early_stop and len(epoch_totals) > cfg.plateau_patience:
            past = epoch_totals[-cfg.plateau_patience - 1]
            if past - epoch_totals[-1] < cfg.plateau_tol * abs(past):
                break
    return {"model": model, "history": history, "train_indices": train_idx,
            "val_indices": val_idx, "corpus": corpus}


def predict_alpha(model, image_chw: np.ndarray) -> np.ndarray:
    """Forward a single [3,H,W] image; returns the clipped final matte [H,W]."""
    r = model.cfg.resolution
    if image_chw.shape[-2:] != (r, r):
        image_chw = resize_bilinear_array(image_chw, r, r)
    preds = model.forward(Tensor(np.clip(image_chw, 0.0, 1.0)[None]))
    return np.clip(preds.final.data[0, 0], 0.0, 1.0)


def evaluate_model(model, corpus: Corpus, indices, oracle: bool = False):
    """Per-sample metric reports plus the dataset mean."""
    rows = []
    for i in indices:
        row = corpus.resized[i]
        gt = row["alpha"][0]
        pred = gt if oracle else predict_alpha(model, row["image"])
        rows.append((f"{i:04d}", evaluate_pair(pred, gt)))
    return rows, mean_report([r for _, r in rows])
