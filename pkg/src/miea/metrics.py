"""PSNR / SSIM image quality and their aggregation over evaluation sets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class QualityRecord:
    psnr_db: float
    ssim: float
    # records whose PSNR was the identical-image sentinel (inf), set by aggregate()
    excluded: int = 0

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"ssim out of range: {self.ssim}")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value**2 / mse)


def _gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable 'valid' correlation over the two spatial axes
    k = len(g)
    rows = sum(g[i] * img[i : img.shape[0] - k + 1 + i] for i in range(k))
    return sum(g[j] * rows[:, j : rows.shape[1] - k + 1 + j] for j in range(k))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity over fully-contained 11x11 Gaussian windows.

    Multichannel ``(H, W, C)`` inputs are scored per channel and averaged.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < WINDOW_SIZE or a.shape[1] < WINDOW_SIZE:
        raise ValueError(f"image {a.shape[:2]} smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    g = _gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    value = float(np.mean(num / den))
    return min(1.0, max(-1.0, value))


def evaluate(reference, reconstructed) -> QualityRecord:
    return QualityRecord(psnr(reference, reconstructed), ssim(reference, reconstructed))


def aggregate(records: Sequence[QualityRecord]) -> QualityRecord:
    """Average per-image PSNR (finite values only) and SSIM."""
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    finite = [r.psnr_db for r in records if math.isfinite(r.psnr_db)]
    excluded = len(records) - len(finite)
    mean_psnr = math.fsum(finite) / len(finite) if finite else math.inf
    mean_ssim = math.fsum(r.ssim for r in records) / len(records)
    return QualityRecord(mean_psnr, mean_ssim, excluded)
