"""Brute-force reference implementations for the test suite.

Everything here is written as literal transcriptions of the defining
formulas: nested Python loops, ``math`` functions, 64-bit throughout.
Nothing in this module shares numerical code with the main paths, so
agreement between the two is evidence rather than tautology.  O(n^2)
cost is accepted; these run only under pytest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass
class OracleReport:
    """One main-path vs oracle comparison, with its tolerance on record."""

    case: str
    main_value: float
    oracle_value: float
    tolerance: float

    @property
    def abs_error(self) -> float:
        return abs(self.main_value - self.oracle_value)

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.main_value), abs(self.oracle_value), 1e-300)
        return self.abs_error / denom

    @property
    def passed(self) -> bool:
        return self.abs_error <= self.tolerance


def oracle_cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(sum(float(x) * float(x) for x in a))
    nb = math.sqrt(sum(float(y) * float(y) for y in b))
    return dot / (na * nb)


def oracle_nt_xent(z: np.ndarray, pair_index: Sequence[int], tau: float) -> float:
    """Contrastive loss as a literal double loop over anchors and batch items.

    Each anchor's denominator runs over every other item in the batch,
    partner included; the per-anchor terms are summed.
    """
    n = len(z)
    total = 0.0
    for anchor in range(n):
        partner = pair_index[anchor]
        pos = math.exp(oracle_cosine(z[anchor], z[partner]) / tau)
        denom = 0.0
        for other in range(n):
            if other == anchor:
                continue
            denom += math.exp(oracle_cosine(z[anchor], z[other]) / tau)
        total += -math.log(pos / denom)
    return total


def oracle_grad(
    fn: Callable[[list[np.ndarray]], float],
    params: list[np.ndarray],
    epsilon: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of a scalar function of array parameters."""
    grads = []
    work = [np.array(p, dtype=np.float64) for p in params]
    for idx, p in enumerate(work):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = fn(work)
            flat[i] = orig - epsilon
            lo = fn(work)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * epsilon)
        grads.append(g)
    return grads


def oracle_ridge(X: np.ndarray, y: np.ndarray, alpha: float):
    """Ridge fit via least squares on the penalty-augmented design matrix.

    Rows ``sqrt(alpha) * I`` are appended to the centered design so the
    intercept stays unpenalized; solved with lstsq rather than the normal
    equations used by the main path.
    """
    from .downstream import RidgeModel  # dataclass container only

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    top = X - x_mean
    bottom = math.sqrt(alpha) * np.eye(d)
    design = np.vstack([top, bottom])
    target = np.concatenate([y - y_mean, np.zeros(d)])
    w, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    intercept = y_mean - float(np.dot(w, x_mean))
    return RidgeModel(weights=w, intercept=intercept, alpha=float(alpha))


def _kernel_value(kernel: str, x: float) -> float:
    ax = abs(x)
    if kernel == "bilinear":
        return 1.0 - ax if ax < 1.0 else 0.0
    if kernel == "bicubic":
        a = -0.5
        if ax < 1.0:
            return (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0
        if ax < 2.0:
            return a * ax**3 - 5.0 * a * ax**2 + 8.0 * a * ax - 4.0 * a
        return 0.0
    if kernel == "lanczos":
        a = 3.0
        if ax >= a:
            return 0.0
        if ax < 1e-12:
            return 1.0
        return a * math.sin(math.pi * x) * math.sin(math.pi * x / a) / (math.pi**2 * x**2)
    raise ValueError(kernel)


_SUPPORT = {"bilinear": 1.0, "bicubic": 2.0, "lanczos": 3.0}


def _axis_taps(n_in: int, n_out: int, kernel: str, j: int) -> tuple[list[int], list[float]]:
    scale = n_out / n_in
    fscale = max(1.0 / scale, 1.0)
    radius = _SUPPORT[kernel] * fscale
    center = (j + 0.5) / scale - 0.5
    lo = math.ceil(center - radius)
    hi = math.floor(center + radius)
    idx, wts = [], []
    for k in range(lo, hi + 1):
        idx.append(min(max(k, 0), n_in - 1))
        wts.append(_kernel_value(kernel, (k - center) / fscale))
    total = sum(wts)
    return idx, [w / total for w in wts]


def oracle_resample(image: np.ndarray, out_shape: tuple[int, int], kernel: str) -> np.ndarray:
    """Direct per-pixel windowed convolution resampler (same convention)."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, c = img.shape
    out_h, out_w = out_shape
    out = np.zeros((out_h, out_w, c))
    if kernel == "nearest":
        for i in range(out_h):
            src_i = min(int(math.floor((i + 0.5) * h / out_h)), h - 1)
            for j in range(out_w):
                src_j = min(int(math.floor((j + 0.5) * w / out_w)), w - 1)
                out[i, j] = img[src_i, src_j]
        return out[:, :, 0] if squeeze else out
    rows = [_axis_taps(h, out_h, kernel, i) for i in range(out_h)]
    cols = [_axis_taps(w, out_w, kernel, j) for j in range(out_w)]
    for i in range(out_h):
        ridx, rwts = rows[i]
        for j in range(out_w):
            cidx, cwts = cols[j]
            for ch in range(c):
                acc = 0.0
                for k, wy in zip(ridx, rwts):
                    for l, wx in zip(cidx, cwts):
                        acc += wy * wx * img[k, l, ch]
                out[i, j, ch] = acc
    return out[:, :, 0] if squeeze else out


def oracle_gaussian_blur(image: np.ndarray, sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Direct separable convolution with a sampled, normalized Gaussian.

    Kernel radius and symmetric boundary handling follow the definition the
    main path documents (radius = int(truncate * sigma + 0.5)).
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    radius = int(truncate * sigma + 0.5)
    kern = [math.exp(-0.5 * (k / sigma) ** 2) for k in range(-radius, radius + 1)]
    total = sum(kern)
    kern = [k / total for k in kern]
    padded = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="symmetric")
    h, w, c = img.shape
    tmp = np.zeros_like(padded)
    for i in range(h):
        for j in range(padded.shape[1]):
            for ch in range(c):
                acc = 0.0
                for t, kv in enumerate(kern):
                    acc += kv * padded[i + t, j, ch]
                tmp[i + radius, j, ch] = acc
    out = np.zeros((h, w, c))
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                acc = 0.0
                for t, kv in enumerate(kern):
                    acc += kv * tmp[i + radius, j + t, ch]
                out[i, j, ch] = acc
    return out[:, :, 0] if squeeze else out


def oracle_spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank-difference formula 1 - 6*sum(d^2)/(n(n^2-1)); tie-free inputs only."""
    n = len(x)
    if len(set(x)) != n or len(set(y)) != n:
        raise ValueError("rank-difference formula requires tie-free inputs")

    def ranks(v):
        order = sorted(range(n), key=lambda i: v[i])
        r = [0] * n
        for rank, i in enumerate(order, start=1):
            r[i] = rank
        return r

    rx, ry = ranks(x), ranks(y)
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def oracle_pair_collision_probability(group_sizes: Sequence[int], draws: int) -> float:
    """P(>= 2 of ``draws`` without-replacement picks share a group).

    Enumerates the ways to pick one item from each of ``draws`` distinct
    groups and divides by C(N, draws).
    """
    from itertools import combinations

    n = sum(group_sizes)
    if draws > n:
        raise ValueError("more draws than items")
    distinct = 0
    for subset in combinations(group_sizes, draws):
        prod = 1
        for size in subset:
            prod *= size
        distinct += prod
    return 1.0 - distinct / math.comb(n, draws)
