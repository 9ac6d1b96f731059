"""PSNR and SSIM for images with intensities in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError

K1, K2 = 0.01, 0.03
WINDOW = 11
WINDOW_SIGMA = 1.5


@dataclass(frozen=True)
class QualityScore:
    psnr: float
    ssim: float


def _pair(ref, test) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise DimensionError(f"shape mismatch: {ref.shape} vs {test.shape}")
    if ref.ndim == 2:
        ref, test = ref[:, :, None], test[:, :, None]
    return ref, test


def psnr(ref, test) -> float:
    """Joint-channel PSNR with peak 1.0; ``inf`` for identical images."""
    ref, test = _pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = WINDOW, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = taps.size
    rows = sliding_window_view(img, k, axis=0) @ taps
    return sliding_window_view(rows, k, axis=1) @ taps


def ssim(ref, test) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid region, channel mean."""
    ref, test = _pair(ref, test)
    h, w, c = ref.shape
    if min(h, w) < WINDOW:
        raise InputError(f"image {h}x{w} is smaller than the {WINDOW}x{WINDOW} window")
    c1, c2 = K1 ** 2, K2 ** 2
    taps = gaussian_window()
    vals = []
    for ch in range(c):
        x, y = ref[:, :, ch], test[:, :, ch]
        mx, my = _filter_valid(x, taps), _filter_valid(y, taps)
        sxx = _filter_valid(x * x, taps) - mx * mx
        syy = _filter_valid(y * y, taps) - my * my
        sxy = _filter_valid(x * y, taps) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def score(ref, test) -> QualityScore:
    return QualityScore(psnr(ref, test), ssim(ref, test))
