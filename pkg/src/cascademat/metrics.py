"""Standard matting evaluation metrics between predicted and ground-truth
alpha maps: absolute-difference sum, mean squared error, perceptual gradient
error, and connectivity error. Sum-style metrics are reported /1000 so that
full-resolution magnitudes land in the conventional single-digit range.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .tensor import Tensor

GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_PHI_THRESHOLD = 0.15
KILO = 1000.0

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass
class MetricReport:
    sad: float
    mse: float
    grad: float
    conn: float

    def as_dict(self) -> dict:
        return {"sad": self.sad, "mse": self.mse,
                "grad": self.grad, "conn": self.conn}


def _as_map(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a single 2-D alpha map, got shape {arr.shape}")
    return arr


def _pair(pred, gt):
    p, g = _as_map(pred), _as_map(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return p, g


def sad(pred, gt) -> float:
    """Sum of absolute differences, kilo-scaled."""
    p, g = _pair(pred, gt)
    return float(np.abs(p - g).sum() / KILO)


def mse(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(((p - g) ** 2).mean())


@lru_cache(maxsize=8)
def _gaussian_derivative_kernel(sigma: float) -> np.ndarray:
    """First-derivative-of-Gaussian filter (derivative along columns),
    L2-normalized; support radius chosen where the Gaussian tail drops
    below 1e-2."""
    half = int(np.ceil(sigma * np.sqrt(
        -2.0 * np.log(np.sqrt(2.0 * np.pi) * sigma * 1e-2))))
    idx = np.arange(-half, half + 1, dtype=np.float64)
    gauss = np.exp(-idx ** 2 / (2 * sigma ** 2)) / (sigma * np.sqrt(2 * np.pi))
    dgauss = -idx * gauss / sigma ** 2
    kernel = gauss[:, None] * dgauss[None, :]
    kernel = kernel / np.sqrt((kernel ** 2).sum())
    kernel.setflags(write=False)
    return kernel

def _gradient_amplitude(arr: np.ndarray, sigma: float) -> np.ndarray:
    kx = _gaussian_derivative_kernel(sigma)
    gx = ndimage.convolve(arr, kx, mode="nearest")
    gy = ndimage.convolve(arr, kx.T, mode="nearest")
    return np.sqrt(gx ** 2 + gy ** 2)


def grad_error(pred, gt, sigma: float = GRAD_SIGMA) -> float:
    """Squared difference of derivative-of-Gaussian gradient magnitudes,
    summed and kilo-scaled."""
    p, g = _pair(pred, gt)
    diff = _gradient_amplitude(p, sigma) - _gradient_amplitude(g, sigma)
    return float((diff ** 2).sum() / KILO)


def _largest_connected(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected foreground component (empty mask stays empty)."""
    labels, count = ndimage.label(mask, structure=_FOUR_CONNECTED)
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == sizes.argmax()


def conn_error(pred, gt, step: float = CONN_STEP) -> float:
    """Connectivity degradation against the largest jointly-opaque region.

    Sweeps thresholds 0.1..0.9; for each pixel records the last threshold at
    which it stayed inside the largest connected region where both maps are
    at least that opaque, then aggregates the per-pixel degradation of both
    maps relative to that level, kilo-scaled.
    """
    p, g = _pair(pred, gt)
    # integer numerators keep the threshold ladder exact in floating point
    denom = round(1.0 / step)
    last_connected = np.full(p.shape, -1.0)
    for k in range(1, denom):
        theta = k / denom
        region = _largest_connected((p >= theta) & (g >= theta))
        newly_cut = (last_connected == -1.0) & ~region
        last_connected[newly_cut] = (k - 1) / denom
    last_connected[last_connected == -1.0] = 1.0
    pd = p - last_connected
    gd = g - last_connected
    phi_p = 1.0 - pd * (pd >= CONN_PHI_THRESHOLD)
    phi_g = 1.0 - gd * (gd >= CONN_PHI_THRESHOLD)
    return float(np.abs(phi_p - phi_g).sum() / KILO)


def evaluate_pair(pred, gt) -> MetricReport:
    return MetricReport(sad=sad(pred, gt), mse=mse(pred, gt),
                        grad=grad_error(pred, gt), conn=conn_error(pred, gt))


def mean_report(reports) -> MetricReport:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    return MetricReport(
        sad=float(np.mean([r.sad for r in reports])),
        mse=float(np.mean([r.mse for r in reports])),
        grad=float(np.mean([r.grad for r in reports])),
        conn=float(np.mean([r.conn for r in reports])),
    )


def format_report_table(rows, mean: MetricReport) -> str:
    """Line-oriented evaluation table: per-sample rows then dataset means."""
    lines = [f"{'sample':>8}  {'SAD':>10}  {'MSE':>10}  {'Grad':>10}  {'Conn':>10}"]
    for sample_id, r in rows:
        lines.append(f"{sample_id:>8}  {r.sad:>10.6f}  {r.mse:>10.6f}  "
                     f"{r.grad:>10.6f}  {r.conn:>10.6f}")
    lines.append(f"{'mean':>8}  {mean.sad:>10.6f}  {mean.mse:>10.6f}  "
                 f"{mean.grad:>10.6f}  {mean.conn:>10.6f}")
    return "\n".join(lines)
