"""Separable polynomial-kernel image resampling.

Sampling convention: output pixel j reads source coordinate
``(j + 0.5) / scale - 0.5`` with ``scale = n_out / n_in`` per axis; when
downscaling, the kernel is widened by ``n_in / n_out`` for anti-aliasing.
Out-of-range taps clamp to the nearest edge pixel, and each output tap's
weights are normalized to sum to one, so constant images are preserved
exactly by every kernel.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError

KERNELS = ("nearest", "bilinear", "bicubic", "lanczos")

LANCZOS_LOBES = 3  # lobe parameter a of the windowed-sinc kernel
BICUBIC_A = -0.5  # Keys cubic coefficient


def round_half_away(x: float) -> int:
    """round() with halves away from zero (2.5 -> 3), used for output dims."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def scaled_dims(height: int, width: int, scale: float) -> tuple[int, int]:
    """Output dims of an upscale by ``scale``."""
    return round_half_away(height * scale), round_half_away(width * scale)


def _bilinear(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    return np.where(x < 1.0, 1.0 - x, 0.0)


def _bicubic(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    a = BICUBIC_A
    inner = (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0
    outer = a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a
    return np.where(x < 1.0, inner, np.where(x < 2.0, outer, 0.0))


def _lanczos(x: np.ndarray) -> np.ndarray:
    a = float(LANCZOS_LOBES)
    out = np.sinc(x) * np.sinc(x / a)
    return np.where(np.abs(x) < a, out, 0.0)


_KERNEL_FNS = {
    "bilinear": (_bilinear, 1.0),
    "bicubic": (_bicubic, 2.0),
    "lanczos": (_lanczos, float(LANCZOS_LOBES)),
}


def _axis_weights(n_in: int, n_out: int, kernel: str) -> np.ndarray:
    """Dense (n_out, n_in) resampling matrix for one axis."""
    fn, support = _KERNEL_FNS[kernel]
    scale = n_out / n_in
    fscale = max(1.0 / scale, 1.0)
    radius = support * fscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    lo = np.ceil(centers - radius).astype(int)
    hi = np.floor(centers + radius).astype(int)
    width = int((hi - lo).max()) + 1
    taps = lo[:, None] + np.arange(width)[None, :]
    w = fn((taps - centers[:, None]) / fscale)
    w[taps > hi[:, None]] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    matrix = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), width)
    cols = np.clip(taps, 0, n_in - 1).ravel()
    np.add.at(matrix, (rows, cols), w.ravel())
    return matrix


def resample(image: np.ndarray, out_shape: tuple[int, int], kernel: str = "bicubic") -> np.ndarray:
    """Resample an (H, W, C) or (H, W) image to ``out_shape`` spatial dims."""
    if kernel not in KERNELS:
        raise DataError(f"unknown kernel {kernel!r} (expected one of {KERNELS})")
    if image.ndim not in (2, 3) or image.shape[0] < 1 or image.shape[1] < 1:
        raise DataError(f"cannot resample image of shape {image.shape}")
    out_h, out_w = out_shape
    if out_h < 1 or out_w < 1:
        raise DataError(f"degenerate output dims {out_shape}")
    squeeze = image.ndim == 2
    img = np.asarray(image, dtype=np.float64)
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if kernel == "nearest":
        ys = np.minimum((np.floor((np.arange(out_h) + 0.5) * h / out_h)).astype(int), h - 1)
        xs = np.minimum((np.floor((np.arange(out_w) + 0.5) * w / out_w)).astype(int), w - 1)
        out = img[np.ix_(ys, xs)]
    else:
        wy = _axis_weights(h, out_h, kernel)
        wx = _axis_weights(w, out_w, kernel)
        out = np.einsum("oh,hwc->owc", wy, img)
        out = np.einsum("pw,owc->opc", wx, out)
    return out[:, :, 0] if squeeze else out


def lanczos_half(image: np.ndarray) -> np.ndarray:
    """Half-scale an image with the 3-lobe windowed-sinc kernel.

    Output dims are (floor(H/2), floor(W/2)); values are clamped to [0, 1].
    """
    img = np.asarray(image)
    if img.ndim not in (2, 3) or img.shape[0] < 2 or img.shape[1] < 2:
        raise DataError(f"cannot half-scale image of shape {img.shape}")
    out = resample(img, (img.shape[0] // 2, img.shape[1] // 2), kernel="lanczos")
    return np.clip(out, 0.0, 1.0)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Channel-wise Gaussian blur, sampled kernel with reflect boundary."""
    from scipy import ndimage

    img = np.asarray(image, dtype=np.float64)
    axes = (0, 1)
    return ndimage.gaussian_filter(img, sigma=sigma, axes=axes, mode="reflect")
