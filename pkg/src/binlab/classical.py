"""Classical thresholding baselines: global Otsu and local Sauvola.

Both operate on single-channel float images in [0, 1] and emit {0, 1}
ink maps with the package's dark-is-ink polarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .imaging import validate_image

N_BINS = 256


@dataclass(frozen=True)
class SauvolaParams:
    """Window size, sensitivity k, and std-dev dynamic range r.

    Defaults are window 25 and k 0.2 (the usual document settings) with
    r 0.5, which is the conventional 128 rescaled from 8-bit intensities
    to the [0, 1] range used here.
    """

    window: int = 25
    k: float = 0.2
    r: float = 0.5

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.r <= 0:
            raise ValueError(f"r must be positive, got {self.r}")


def _require_gray(img: np.ndarray) -> np.ndarray:
    arr = validate_image(img)
    if arr.ndim != 2:
        raise ValueError("expected a single-channel image")
    return arr


def quantize_levels(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to the 256 integer histogram levels."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(
        np.int64
    )


def otsu(img: np.ndarray) -> tuple[float, np.ndarray]:
    """Global threshold maximizing between-class variance over 256 bins.

    Returns ``(threshold, binary)`` where pixels strictly below the
    threshold are ink. The scan assigns level ``<= t`` to the dark class
    and reports the intensity ``(t + 0.5) / 255`` so the comparison
    ``img < threshold`` reproduces the winning split. Ties go to the
    smallest threshold. A constant image has no ink evidence: its own
    value is returned and everything is background.
    """
    arr = _require_gray(img)
    if arr.max() == arr.min():
        return float(arr.flat[0]), np.zeros(arr.shape, dtype=np.uint8)

    hist = np.bincount(quantize_levels(arr).ravel(), minlength=N_BINS).astype(np.float64)
    levels = np.arange(N_BINS, dtype=np.float64)
    w0 = np.cumsum(hist)
    m0 = np.cumsum(hist * levels)
    total = w0[-1]
    mass = m0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (mass - m0) / w1
        variance = w0 * w1 * (mu0 - mu1) ** 2
    variance = np.where((w0 > 0) & (w1 > 0), variance, -np.inf)
    t_star = int(np.argmax(variance))
    threshold = (t_star + 0.5) / 255.0
    return threshold, (arr < threshold).astype(np.uint8)


def local_mean_std(img: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Windowed mean and standard deviation with edge replication."""
    arr = _require_gray(img)
    mean = ndi.uniform_filter(arr, size=window, mode="nearest")
    mean_sq = ndi.uniform_filter(arr * arr, size=window, mode="nearest")
    var = np.clip(mean_sq - mean * mean, 0.0, None)
    return mean, np.sqrt(var)


def sauvola(img: np.ndarray, params: SauvolaParams | None = None) -> np.ndarray:
    """Local Sauvola threshold T = m * (1 + k * (s / r - 1)); ink where img < T."""
    p = params or SauvolaParams()
    arr = _require_gray(img)
    mean, std = local_mean_std(arr, p.window)
    threshold = mean * (1.0 + p.k * (std / p.r - 1.0))
    return (arr < threshold).astype(np.uint8)
