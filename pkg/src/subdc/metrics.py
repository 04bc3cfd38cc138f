"""Image-quality metrics: NRMSE, PSNR and SSIM."""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def nrmse(test: np.ndarray, ref: np.ndarray) -> float:
    """``||test - ref||_2 / ||ref||_2`` over all (complex) entries."""
    test, ref = np.asarray(test), np.asarray(ref)
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch {test.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(test - ref) / denom)


def psnr(test: np.ndarray, ref: np.ndarray) -> float:
    """Peak SNR in dB of magnitude images, peak taken from ``|ref|``.

    Returns ``inf`` when the magnitudes agree exactly.
    """
    test, ref = np.abs(np.asarray(test)), np.abs(np.asarray(ref))
    if test.size == 0:
        raise ValueError("empty input")
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch {test.shape} vs {ref.shape}")
    mse = np.mean((test - ref) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(ref.max() ** 2 / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(test: np.ndarray, ref: np.ndarray, data_range: float | None = None) -> float:
    """Mean SSIM of two 2-D magnitude images.

    Uses an 11x11 Gaussian window (sigma 1.5), ``K1 = 0.01``, ``K2 = 0.03``,
    evaluated at every position where the window fits entirely inside the
    image. ``data_range`` defaults to ``max(|ref|)``.
    """
    x = np.abs(np.asarray(test, dtype=np.complex128 if np.iscomplexobj(test) else np.float64))
    y = np.abs(np.asarray(ref, dtype=np.complex128 if np.iscomplexobj(ref) else np.float64))
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError("ssim expects two 2-D images of the same shape")
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"images must be at least {SSIM_WIN}x{SSIM_WIN}")
    if data_range is None:
        data_range = float(y.max())
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    w = gaussian_window()

    def filt(img):
        return fftconvolve(img, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx ** 2 + my ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim_frames(test: np.ndarray, ref: np.ndarray) -> float:
    """Mean SSIM over the last axis of ``(N_x, N_y, K)`` stacks, each frame
    scaled by its own reference peak."""
    return float(np.mean([ssim(test[..., k], ref[..., k]) for k in range(ref.shape[-1])]))
