"""Synthetic training data: linear compositing of foregrounds over
backgrounds, the crop/flip/photometric augmentation pipeline, a procedural
foreground/alpha generator (soft-edged ellipses plus hair-like filaments),
and PNG round-tripping with a line-oriented corpus manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy.spatial import cKDTree

from .tensor import Tensor, resize_bilinear_array

COMPOSITE_TOL = 1e-6
_LUMA = np.array([0.299, 0.587, 0.114]).reshape(3, 1, 1)


@dataclass
class CompositeSample:
    """(image, foreground, background, alpha) bound by the blend identity
    image = alpha*fg + (1-alpha)*bg, checked at construction."""
    image: Tensor
    fg: Tensor
    bg: Tensor
    alpha: Tensor

    def __post_init__(self):
        recomposed = (self.alpha.data * self.fg.data
                      + (1.0 - self.alpha.data) * self.bg.data)
        if np.max(np.abs(self.image.data - recomposed)) > COMPOSITE_TOL:
            raise ValueError("image is not the blend of fg/bg under alpha")


def composite(fg: Tensor, bg: Tensor, alpha: Tensor) -> CompositeSample:
    """Blend ``fg`` over ``bg`` with per-pixel opacity ``alpha``."""
    fga, bga, ala = fg.data, bg.data, alpha.data
    if fga.shape != bga.shape or fga.shape[0] != 3:
        raise ValueError(f"fg/bg must be matching [3,H,W], got {fga.shape}/{bga.shape}")
    if ala.shape != (1,) + fga.shape[1:]:
        raise ValueError(f"alpha must be [1,H,W] matching fg, got {ala.shape}")
    for name, arr in (("fg", fga), ("bg", bga), ("alpha", ala)):
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name} values outside [0,1]")
    image = ala * fga + (1.0 - ala) * bga
    return CompositeSample(image=Tensor(image), fg=fg, bg=bg, alpha=alpha)


@dataclass
class SampleBatch:
    """Stacked samples with a leading batch axis, ready for the loss."""
    image: Tensor
    fg: Tensor
    bg: Tensor
    alpha: Tensor

    @staticmethod
    def from_samples(samples) -> "SampleBatch":
        stack = lambda attr: Tensor(np.stack([getattr(s, attr).data for s in samples]))
        return SampleBatch(image=stack("image"), fg=stack("fg"),
                           bg=stack("bg"), alpha=stack("alpha"))


# ----------------------------------------------------------------------
# augmentation


@dataclass
class AugmentSpec:
    """Square crop range, target size, flip probability, photometric jitter."""
    size: int
    crop_lo: int
    crop_hi: int
    flip_prob: float = 0.5
    jitter_lo: float = 0.8
    jitter_hi: float = 1.2

    def __post_init__(self):
        if self.crop_lo < int(np.ceil(0.64 * self.size)):
            raise ValueError("crop_lo below 0.64x the target size")
        if self.crop_lo > self.crop_hi:
            raise ValueError("empty crop range")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip probability outside [0,1]")

    @staticmethod
    def for_resolution(r: int) -> "AugmentSpec":
        # mirrors the 512..800 crop window, proportionally rescaled
        return AugmentSpec(size=r, crop_lo=r, crop_hi=round(r * 800 / 512))


def _photometric(img: np.ndarray, fb: float, fc: float, fs: float) -> np.ndarray:
    img = img * fb
    gray = (img * _LUMA).sum(axis=0, keepdims=True)
    img = fc * img + (1.0 - fc) * gray.mean()
    gray = (img * _LUMA).sum(axis=0, keepdims=True)
    img = fs * img + (1.0 - fs) * gray
    return np.clip(img, 0.0, 1.0)


def augment(sample: CompositeSample, spec: AugmentSpec,
            rng: np.random.Generator) -> CompositeSample:
    """Random square crop -> resize -> optional horizontal flip -> identical
    photometric jitter of fg and bg, then re-composite so the blend identity
    stays exact. Alpha is never photometrically altered."""
    f, b, a = sample.fg.data, sample.bg.data, sample.alpha.data
    h, w = f.shape[-2:]
    if h < spec.crop_lo or w < spec.crop_lo:
        raise ValueError(f"source {h}x{w} smaller than crop_lo {spec.crop_lo}")
    side = int(rng.integers(spec.crop_lo, min(spec.crop_hi, h, w) + 1))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))

    def crop_resize(arr):
        window = arr[..., top:top + side, left:left + side]
        if side == spec.size:
            return window.copy()
        return resize_bilinear_array(window, spec.size, spec.size)

    f, b = crop_resize(f), crop_resize(b)
    a = np.clip(crop_resize(a), 0.0, 1.0)
    if rng.random() < spec.flip_prob:
        f, b, a = (np.ascontiguousarray(x[..., ::-1]) for x in (f, b, a))
    fb_, fc_, fs_ = rng.uniform(spec.jitter_lo, spec.jitter_hi, size=3)
    f = _photometric(f, fb_, fc_, fs_)
    b = _photometric(b, fb_, fc_, fs_)
    return composite(Tensor(f), Tensor(b), Tensor(a))


# ----------------------------------------------------------------------
# procedural generator


@dataclass
class SynthSpec:
    """Procedural corpus: soft-edged ellipse blobs plus thin filaments over
    smooth color fields; every foreground is reused across several
    backgrounds."""
    count: int = 200
    size: int = 64
    seed: int = 0
    backgrounds_per_foreground: int = 8

    def __post_init__(self):
        if self.count < 0 or self.size < 8:
            raise ValueError("invalid corpus spec")
        if self.backgrounds_per_foreground < 1:
            raise ValueError("need at least one background per foreground")


def _smooth_field(rng: np.random.Generator, size: int,
                  base_lo: float, base_hi: float) -> np.ndarray:
    span = max(size - 1, 1)
    yy, xx = np.mgrid[0:size, 0:size] / span
    field = np.empty((3, size, size))
    for c in range(3):
        base = rng.uniform(base_lo, base_hi)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        slope = rng.uniform(-0.35, 0.35)
        amp = rng.uniform(0.0, 0.08)
        freq = rng.uniform(1.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        proj = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta)
        field[c] = base + slope * proj + amp * np.sin(2 * np.pi * freq * proj + phase)
    return np.clip(field, 0.0, 1.0)


def _alpha_matte(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    alpha = np.zeros((size, size))
    for _ in range(int(rng.integers(1, 3))):
        cy, cx = rng.uniform(0.3, 0.7, size=2) * size
        ax = rng.uniform(0.14, 0.30) * size
        bx = rng.uniform(0.14, 0.30) * size
        th = rng.uniform(0.0, np.pi)
        feather = rng.uniform(2.5, 4.0)  # soft band width in pixels
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        q = np.sqrt((u / ax) ** 2 + (v / bx) ** 2)
        dist = (q - 1.0) * min(ax, bx)
        blob = np.clip(0.5 - dist / feather, 0.0, 1.0)
        alpha = 1.0 - (1.0 - alpha) * (1.0 - blob)
    pixels = np.stack([yy.ravel(), xx.ravel()], axis=1)
    for _ in range(int(rng.integers(2, 5))):
        p0 = rng.uniform(0.2, 0.8, size=2) * size
        ang = rng.uniform(0.0, 2.0 * np.pi)
        length = rng.uniform(0.3, 0.6) * size
        p2 = p0 + length * np.array([np.sin(ang), np.cos(ang)])
        mid = (p0 + p2) / 2 + rng.normal(0.0, 0.08 * size, size=2)
        t = np.linspace(0.0, 1.0, 4 * size)[:, None]
        curve = (1 - t) ** 2 * p0 + 2 * t * (1 - t) * mid + t ** 2 * p2
        width = rng.uniform(0.5, 1.2)  # strand core width, pixels
        d = cKDTree(curve).query(pixels)[0].reshape(size, size)
        strand = np.clip(1.0 - (d - width / 2.0), 0.0, 1.0)
        alpha = 1.0 - (1.0 - alpha) * (1.0 - strand)
    return np.clip(alpha, 0.0, 1.0)


def _foreground(rng: np.random.Generator, size: int):
    lo, hi = ((0.0, 0.35) if rng.random() < 0.5 else (0.65, 1.0))
    return _smooth_field(rng, size, lo, hi), _alpha_matte(rng, size)[None]


def synthesize(spec: SynthSpec) -> list[CompositeSample]:
    """Deterministic corpus: sample i composites foreground i // B over
    background i, with per-item rng streams so generation order never
    matters."""
    fgs = {}
    samples = []
    for i in range(spec.count):
        fi = i // spec.backgrounds_per_foreground
        if fi not in fgs:
            fgs[fi] = _foreground(
                np.random.default_rng([spec.seed, 1_000_000 + fi]), spec.size)
        fg, alpha = fgs[fi]
        bg = _smooth_field(np.random.default_rng([spec.seed, i]),
                           spec.size, 0.2, 0.8)
        samples.append(composite(Tensor(fg), Tensor(bg), Tensor(alpha)))
    return samples


# ----------------------------------------------------------------------
# image and corpus I/O


def save_image(tensor, path, bit_depth: int = 8) -> None:
    """Write [1,H,W] grayscale or [3,H,W] RGB values in [0,1] as PNG."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected [1|3,H,W], got {arr.shape}")
    if bit_depth not in (8, 16):
        raise ValueError("bit depth must be 8 or 16")
    maxval = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    q = np.round(np.clip(arr, 0.0, 1.0) * maxval).astype(dtype)
    if arr.shape[0] == 1:
        pixels = q[0]
    else:
        pixels = np.ascontiguousarray(q.transpose(1, 2, 0)[:, :, ::-1])  # BGR
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), pixels):
        raise IOError(f"could not write {path}")


def load_image(path) -> Tensor:
    """Read an 8- or 16-bit PNG into [1,H,W] or [3,H,W] values in [0,1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"could not read {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise IOError(f"unsupported sample format {raw.dtype} in {path}")
    if raw.ndim == 2:
        data = raw[None].astype(np.float64) / scale
    elif raw.ndim == 3 and raw.shape[2] == 3:
        data = raw[:, :, ::-1].transpose(2, 0, 1).astype(np.float64) / scale
    else:
        raise IOError(f"unsupported channel layout {raw.shape} in {path}")
    return Tensor(data)


MANIFEST_NAME = "manifest.txt"


@dataclass
class CorpusRecord:
    sample_id: str
    fg: str
    bg: str
    alpha: str


def write_corpus(spec: SynthSpec, root) -> Path:
    """Materialize a synthetic corpus as PNG trios plus a manifest.

    Foreground/alpha pairs are stored once and referenced by several
    manifest rows; composites are never stored.
    """
    root = Path(root)
    records = []
    seen_fg = set()
    for i in range(spec.count):
        fi = i // spec.backgrounds_per_foreground
        fg_rel = f"fg/{fi:04d}.png"
        alpha_rel = f"alpha/{fi:04d}.png"
        bg_rel = f"bg/{i:04d}.png"
        if fi not in seen_fg:
            seen_fg.add(fi)
            fg, alpha = _foreground(
                np.random.default_rng([spec.seed, 1_000_000 + fi]), spec.size)
            save_image(fg, root / fg_rel, bit_depth=8)
            save_image(alpha, root / alpha_rel, bit_depth=16)
        bg = _smooth_field(np.random.default_rng([spec.seed, i]),
                           spec.size, 0.2, 0.8)
        save_image(bg, root / bg_rel, bit_depth=8)
        records.append(CorpusRecord(f"{i:04d}", fg_rel, bg_rel, alpha_rel))
    manifest = root / MANIFEST_NAME
    manifest.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{r.sample_id}\t{r.fg}\t{r.bg}\t{r.alpha}" for r in records]
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""),
                        encoding="utf-8")
    return manifest


def read_manifest(root) -> list[CorpusRecord]:
    path = Path(root) / MANIFEST_NAME
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"malformed manifest line: {line!r}")
        records.append(CorpusRecord(*parts))
    return records


def load_record(root, record: CorpusRecord) -> CompositeSample:
    root = Path(root)
    return composite(load_image(root / record.fg),
                     load_image(root / record.bg),
                     load_image(root / record.alpha))


def manifest_hash(root) -> str:
    return hashlib.sha256(
        (Path(root) / MANIFEST_NAME).read_bytes()).hexdigest()
