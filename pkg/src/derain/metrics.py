"""PSNR and SSIM for image pairs in [0, 1].

SSIM uses the reference settings: 11x11 Gaussian window with sigma 1.5,
K1 = 0.01, K2 = 0.03, computed on the luminance channel over valid-region
windows. Images smaller than the window fall back to the largest odd
window that fits.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["psnr", "ssim", "to_luminance", "MetricReport",
           "evaluate_pairs", "write_report_csv"]

_LUMA = np.array([0.299, 0.587, 0.114])


def to_luminance(img):
    """(H, W, 3) RGB -> (H, W) luminance; grayscale passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def psnr(a, b, peak=1.0):
    """10*log10(peak^2 / MSE); +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size, sigma):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Mean local SSIM over Gaussian-weighted valid windows."""
    x = to_luminance(a)
    y = to_luminance(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    size = min(window_size, x.shape[0], x.shape[1])
    if size % 2 == 0:
        size -= 1
    w = _gaussian_window(size, sigma)

    wx = sliding_window_view(x, (size, size))
    wy = sliding_window_view(y, (size, size))
    mu_x = np.einsum("ijkl,kl->ij", wx, w)
    mu_y = np.einsum("ijkl,kl->ij", wy, w)
    xx = np.einsum("ijkl,kl->ij", wx * wx, w)
    yy = np.einsum("ijkl,kl->ij", wy * wy, w)
    xy = np.einsum("ijkl,kl->ij", wx * wy, w)
    sxx = xx - mu_x * mu_x
    syy = yy - mu_y * mu_y
    sxy = xy - mu_x * mu_y

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    rows: list            # (name, psnr, ssim) per image
    mean_psnr: float
    mean_ssim: float


def evaluate_pairs(named_pairs, peak=1.0):
    """named_pairs: iterable of (name, candidate, reference) images.

    Images are clamped to [0, 1] before scoring (export convention).
    Infinite PSNR rows are excluded from the mean.
    """
    rows = []
    for name, cand, ref in named_pairs:
        c = np.clip(cand, 0.0, 1.0)
        r = np.clip(ref, 0.0, 1.0)
        rows.append((name, psnr(c, r, peak), ssim(c, r, peak=peak)))
    finite = [p for _, p, _ in rows if math.isfinite(p)]
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    mean_ssim = float(np.mean([s for _, _, s in rows])) if rows else 0.0
    return MetricReport(rows, mean_psnr, mean_ssim)


def write_report_csv(report: MetricReport, path):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["image", "psnr", "ssim"])
        for name, p, s in report.rows:
            wr.writerow([name, f"{p:.6f}", f"{s:.6f}"])
        wr.writerow(["mean", f"{report.mean_psnr:.6f}",
                     f"{report.mean_ssim:.6f}"])
