"""Reconstruction metrics: MAE, MSE, SSIM, foreground IoU, and ARI.

SSIM follows the standard windowed formulation (11x11 Gaussian, sigma 1.5,
K1 = 0.01, K2 = 0.03, unit dynamic range), computed per channel over valid
window positions and averaged.  IoU binarizes label maps into
foreground/background.  ARI compares pixel partitions on the pixels whose
ground-truth label is nonzero, the usual convention for multi-object
segmentation benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d

from .losses import DimensionMismatch, image_loss

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class TooSmall(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over channels and valid window positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise TooSmall(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    win = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = correlate2d(x, win, mode="valid")
        my = correlate2d(y, win, mode="valid")
        mxx = correlate2d(x * x, win, mode="valid")
        myy = correlate2d(y * y, win, mode="valid")
        mxy = correlate2d(x * y, win, mode="valid")
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(num / den)
    return float(np.mean(vals))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Foreground intersection-over-union of binarized label maps."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"label shapes differ: {a.shape} vs {b.shape}")
    fa = a != 0
    fb = b != 0
    union = np.logical_or(fa, fb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(fa, fb).sum() / union)


def ari(pred: np.ndarray, truth: np.ndarray) -> float:
    """Adjusted Rand index over pixels with nonzero ground-truth label."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"label shapes differ: {pred.shape} vs {truth.shape}")
    mask = truth != 0
    t = truth[mask].ravel()
    p = pred[mask].ravel()
    n = t.size
    if n == 0:
        return 1.0
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    contingency = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(contingency, (ti, pi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(contingency.astype(np.float64)).sum()
    sum_a = comb2(contingency.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(contingency.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((sum_ij - expected) / (maximum - expected))


@dataclass(frozen=True)
class MetricReport:
    mae: float
    mse: float
    ssim: float
    iou: float
    ari: float
    per_example: dict

    def to_obj(self) -> dict:
        return {
            "mae": self.mae, "mse": self.mse, "ssim": self.ssim,
            "iou": self.iou, "ari": self.ari,
            "per_example": {k: list(v) for k, v in self.per_example.items()},
        }


def evaluate(pred_scenes, truth_scenes, bank, cfg=None) -> MetricReport:
    """Score predicted scenes against ground truth, all metrics averaged.

    Pixel metrics compare the rendered RGB images; IoU/ARI compare label maps
    rendered from both scene lists.
    """
    from .renderer import RenderConfig, render, render_labels

    cfg = cfg or RenderConfig()
    pred_scenes = list(pred_scenes)
    truth_scenes = list(truth_scenes)
    if len(pred_scenes) != len(truth_scenes):
        raise LengthMismatch(
            f"{len(pred_scenes)} predictions vs {len(truth_scenes)} references"
        )
    per = {k: [] for k in ("mae", "mse", "ssim", "iou", "ari")}
    for ps, ts in zip(pred_scenes, truth_scenes):
        pred_img = render(ps, bank, cfg)
        truth_img = render(ts, bank, cfg)
        pred_lab = render_labels(ps, bank, cfg)
        truth_lab = render_labels(ts, bank, cfg)
        per["mae"].append(image_loss(truth_img, pred_img, "mae"))
        per["mse"].append(image_loss(truth_img, pred_img, "mse"))
        per["ssim"].append(ssim(truth_img, pred_img))
        per["iou"].append(iou(pred_lab, truth_lab))
        per["ari"].append(ari(pred_lab, truth_lab))
    means = {k: float(np.mean(v)) if v else float("nan") for k, v in per.items()}
    return MetricReport(mae=means["mae"], mse=means["mse"], ssim=means["ssim"],
                        iou=means["iou"], ari=means["ari"], per_example=per)
