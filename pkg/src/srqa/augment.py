"""Degradation-free view transformations: color-space remapping and flips.

These are the only augmentations applied to pretext crops; anything that
would add blur, noise or compression artifacts is deliberately excluded
because it would corrupt the very signal the pretext task must preserve.
All outputs keep three channels (grayscale-like spaces are replicated) so
the encoder sees a uniform input signature.
"""

from __future__ import annotations

import numpy as np
from skimage import color as skcolor

from .errors import DataError
from .rngutil import as_rng

COLOR_SPACES = ("Grayscale", "RGB", "LAB", "HSV", "MS")


def _check_rgb(crop: np.ndarray) -> np.ndarray:
    arr = np.asarray(crop, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected an HxWx3 RGB crop, got shape {arr.shape}")
    return arr


def _mean_subtracted(arr: np.ndarray) -> np.ndarray:
    """Per-crop mean-subtracted luminance, recentred at 0.5."""
    gray = skcolor.rgb2gray(arr)
    return np.clip(gray - gray.mean() + 0.5, 0.0, 1.0)


# swappable so an alternate reading of the mean-subtraction transform can
# be plugged in without touching callers
MS_TRANSFORM = _mean_subtracted


def to_color_space(crop: np.ndarray, space: str) -> np.ndarray:
    """Remap an RGB crop in [0, 1] into the target space, rescaled to [0, 1]."""
    arr = _check_rgb(crop)
    if space == "RGB":
        return arr.copy()
    if space == "Grayscale":
        gray = skcolor.rgb2gray(arr)
        return np.repeat(gray[:, :, None], 3, axis=2)
    if space == "LAB":
        lab = skcolor.rgb2lab(arr)
        out = np.empty_like(lab)
        out[:, :, 0] = lab[:, :, 0] / 100.0
        out[:, :, 1] = (lab[:, :, 1] + 128.0) / 255.0
        out[:, :, 2] = (lab[:, :, 2] + 128.0) / 255.0
        return np.clip(out, 0.0, 1.0)
    if space == "HSV":
        return skcolor.rgb2hsv(arr)
    if space == "MS":
        ms = MS_TRANSFORM(arr)
        return np.repeat(ms[:, :, None], 3, axis=2)
    raise DataError(f"unknown color space {space!r} (expected one of {COLOR_SPACES})")


def random_flip(crop: np.ndarray, seed) -> np.ndarray:
    """Independent horizontal/vertical flips, each with probability 0.5."""
    rng = as_rng(seed)
    arr = np.asarray(crop)
    if rng.random() < 0.5:
        arr = arr[:, ::-1]
    if rng.random() < 0.5:
        arr = arr[::-1, :]
    return np.ascontiguousarray(arr)


def sample_view(crop: np.ndarray, seed) -> np.ndarray:
    """Uniformly sampled color space followed by random flips."""
    rng = as_rng(seed)
    space = COLOR_SPACES[int(rng.integers(0, len(COLOR_SPACES)))]
    return random_flip(to_color_space(crop, space), rng)
