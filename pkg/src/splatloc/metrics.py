"""Image difference scores used as search heuristics and for evaluation.

All functions take ``(H, W, 3)`` float arrays of linear RGB in ``[0, 1]``.
"""

from __future__ import annotations

import math
from typing import Callable, Literal

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import gaussian_filter

from .errors import ContractError

__all__ = ["sum_abs_diff", "psnr", "ssim", "heuristic", "HeuristicKind", "HEURISTICS", "PSNR_CAP"]

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

HeuristicKind = Literal["sad", "psnr", "ssim"]


def _pair(a, b) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def sum_abs_diff(a, b) -> float:
    """Sum of ``|a - b|`` over every pixel and channel."""
    a, b = _pair(a, b)
    return float(np.abs(a - b).sum())


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for unit peak, capped at 100 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b) -> float:
    """Mean structural similarity over channels.

    Uses an 11x11 Gaussian window with sigma 1.5, ``C1 = 0.01²`` and
    ``C2 = 0.03²`` for unit dynamic range. Only window centers whose window
    lies fully inside the image are averaged.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    h, w = a.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ContractError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    sigma = (SSIM_SIGMA, SSIM_SIGMA, 0.0)
    # truncate=3.5 gives radius int(3.5 * 1.5 + 0.5) = 5, i.e. an 11-tap kernel
    def filt(x):
        return gaussian_filter(x, sigma, truncate=3.5, mode="constant")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    r = SSIM_WINDOW // 2
    return float(np.mean((num / den)[r : h - r, r : w - r]))


def _h_sad(query, rendered) -> float:
    return sum_abs_diff(query, rendered)


def _h_psnr(query, rendered) -> float:
    return PSNR_CAP - psnr(query, rendered)


def _h_ssim(query, rendered) -> float:
    return max(0.0, 1.0 - ssim(query, rendered))


HEURISTICS: dict[str, Callable[[NDArray, NDArray], float]] = {
    "sad": _h_sad,
    "psnr": _h_psnr,
    "ssim": _h_ssim,
}


def heuristic(kind: HeuristicKind, query, rendered) -> float:
    """Cost that is zero for identical images and grows with their difference."""
    try:
        fn = HEURISTICS[kind]
    except KeyError:
        raise ContractError(f"unknown heuristic {kind!r}; choose from {sorted(HEURISTICS)}") from None
    return fn(query, rendered)
