"""Frozen-feature quality prediction and the repeated-split evaluation protocol.

Features are encoder latents extracted at full and half scale from
co-located crops and concatenated; a ridge regressor (regularization 1,
unpenalized intercept) maps them to quality scores.  Evaluation repeats a
seeded 80/20 split 20 times, scoring each holdout with Pearson (accuracy)
and Spearman (monotonicity) correlations, optionally broken down by
upscaling factor.  Splits group by content id so no scene leaks across
the train/test boundary.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, NumericError
from .forge import CropSpec, crop, read_image, reflect_pad_to
from .net import PretextModel, encode_batch
from .records import ScoredRecord
from .resample import lanczos_half
from .rngutil import derived_rng

log = logging.getLogger(__name__)

FIVE_CROP = ("top-left", "top-right", "bottom-left", "bottom-right", "center")


@dataclass
class RidgeModel:
    """Linear probe: weights over 2*d_enc features plus an intercept."""

    weights: np.ndarray
    intercept: float
    alpha: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.weights + self.intercept


def ridge_fit(X, y, alpha: float) -> RidgeModel:
    """Minimize ||y - Xw - b||^2 + alpha ||w||^2 with unpenalized intercept."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 2:
        raise DataError(f"need matching X rows and >= 2 targets, got {X.shape} vs {y.shape}")
    if alpha < 0:
        raise DataError(f"alpha must be >= 0, got {alpha}")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    if np.ptp(y) == 0.0:
        return RidgeModel(weights=np.zeros(X.shape[1]), intercept=y_mean, alpha=float(alpha))
    xc = X - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + alpha * np.eye(X.shape[1])
    try:
        w = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"ridge normal equations are singular: {exc}") from exc
    intercept = y_mean - float(w @ x_mean)
    return RidgeModel(weights=w, intercept=intercept, alpha=float(alpha))


def normal_equation_residual(model: RidgeModel, X, y) -> float:
    """Relative residual of the centered regularized normal equations."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    lhs = (xc.T @ xc + model.alpha * np.eye(X.shape[1])) @ model.weights
    rhs = xc.T @ yc
    denom = max(np.linalg.norm(rhs), 1e-300)
    return float(np.linalg.norm(lhs - rhs) / denom)


def plcc(x, y) -> float:
    """Pearson linear correlation."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise DataError(f"need two same-length vectors of >= 2 values, got {x.size}, {y.size}")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise NumericError("correlation undefined for zero-variance input")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def srcc(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise DataError(f"need two same-length vectors of >= 2 values, got {x.size}, {y.size}")
    return plcc(rankdata(x), rankdata(y))


def extract_features(
    image: np.ndarray,
    encoder: PretextModel,
    crop_size: int = 256,
    n_random: int = 0,
    seed: int = 0,
) -> np.ndarray:
    """Per-crop multiscale features: full-scale latents || half-scale latents.

    Default is the five deterministic crops (four corners and the center)
    taken at co-located relative positions on the image and its half-scale
    version; ``n_random`` switches to that many random co-located crops.
    Returns an (n_crops, 2 * d_enc) array.
    """
    full = reflect_pad_to(np.asarray(image, dtype=np.float64), max(crop_size, 2))
    half = lanczos_half(full)
    crops = []
    if n_random > 0:
        rng = derived_rng(seed, "downstream-crops", n_random)
        half_p = reflect_pad_to(half, crop_size)
        for _ in range(n_random):
            ry, rx = rng.random(2)
            for img in (full, half_p):
                oy = round(ry * (img.shape[0] - crop_size))
                ox = round(rx * (img.shape[1] - crop_size))
                crops.append(img[oy : oy + crop_size, ox : ox + crop_size])
    else:
        for pos in FIVE_CROP:
            spec = CropSpec(size=crop_size, position=pos)
            crops.append(crop(full, spec))
            crops.append(crop(half, spec))
    latents = encode_batch(encoder, np.stack(crops).astype(np.float32))
    return np.concatenate([latents[0::2], latents[1::2]], axis=1)


def predict_quality(
    image: np.ndarray,
    encoder: PretextModel,
    model: RidgeModel,
    crop_size: int = 256,
) -> float:
    """Mean of the per-crop ridge predictions."""
    feats = extract_features(image, encoder, crop_size=crop_size)
    if feats.shape[1] != model.weights.shape[0]:
        raise DataError(
            f"feature dims {feats.shape[1]} do not match ridge weights "
            f"{model.weights.shape[0]}"
        )
    return float(model.predict(feats).mean())


def file_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


class FeatureCache:
    """Binary store of per-image crop features.

    Entries are keyed by (image path hash, checkpoint hash, crop policy),
    so a cache survives re-runs but never serves stale features after the
    encoder or crop settings change.
    """

    def __init__(self, path: str):
        self.path = path
        self._data: dict[str, np.ndarray] = {}
        if os.path.exists(path):
            with np.load(path) as payload:
                self._data = {k: payload[k] for k in payload.files}

    @staticmethod
    def key(image_path: str, checkpoint_hash: str, policy: str) -> str:
        raw = f"{image_path}\x00{checkpoint_hash}\x00{policy}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:32]

    def get(self, key: str) -> np.ndarray | None:
        return self._data.get(key)

    def put(self, key: str, features: np.ndarray) -> None:
        self._data[key] = np.asarray(features)

    def save(self) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        tmp = self.path + ".tmp.npz"
        np.savez_compressed(tmp, **self._data)
        os.replace(tmp, self.path)

    def __len__(self) -> int:
        return len(self._data)


@dataclass
class EvalReport:
    """Per-iteration correlations plus aggregates and per-scale breakdowns."""

    iterations: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    per_scale: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def plcc_mean(self) -> float:
        return float(np.mean([r["plcc"] for r in self.iterations])) if self.iterations else math.nan

    @property
    def plcc_std(self) -> float:
        return float(np.std([r["plcc"] for r in self.iterations])) if self.iterations else math.nan

    @property
    def srcc_mean(self) -> float:
        return float(np.mean([r["srcc"] for r in self.iterations])) if self.iterations else math.nan

    @property
    def srcc_std(self) -> float:
        return float(np.std([r["srcc"] for r in self.iterations])) if self.iterations else math.nan

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "aggregate": {
                "plcc_mean": self.plcc_mean,
                "plcc_std": self.plcc_std,
                "srcc_mean": self.srcc_mean,
                "srcc_std": self.srcc_std,
                "iterations": len(self.iterations),
                "skipped": len(self.skipped),
            },
            "per_scale": self.per_scale,
            "iterations": self.iterations,
            "skipped": self.skipped,
        }

    def format_table(self) -> str:
        lines = [
            f"{'iteration':>9}  {'PLCC':>8}  {'SRCC':>8}  {'n_train':>7}  {'n_test':>6}"
        ]
        for row in self.iterations:
            lines.append(
                f"{row['iteration']:>9d}  {row['plcc']:>8.4f}  {row['srcc']:>8.4f}"
                f"  {row['n_train']:>7d}  {row['n_test']:>6d}"
            )
        lines.append(
            f"{'mean':>9}  {self.plcc_mean:>8.4f}  {self.srcc_mean:>8.4f}"
        )
        lines.append(
            f"{'std':>9}  {self.plcc_std:>8.4f}  {self.srcc_std:>8.4f}"
        )
        for scale, agg in sorted(self.per_scale.items()):
            lines.append(
                f"{'x' + scale:>9}  {agg['plcc_mean']:>8.4f}  {agg['srcc_mean']:>8.4f}"
                f"  ({agg['iterations']} iterations)"
            )
        return "\n".join(lines)


def save_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path: str) -> EvalReport:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return EvalReport(
        iterations=payload["iterations"],
        skipped=payload["skipped"],
        per_scale=payload["per_scale"],
        config=payload["config"],
    )


def _resolve(record_path: str, base_dir: str) -> str:
    if os.path.isabs(record_path) or not base_dir:
        return record_path
    return os.path.normpath(os.path.join(base_dir, record_path))


def _split_by_content(content_ids, train_frac: float, rng) -> tuple[set, set]:
    groups = sorted(set(content_ids))
    if len(groups) < 2:
        raise DataError("need at least two content groups to split")
    order = rng.permutation(len(groups))
    n_test = max(1, round((1.0 - train_frac) * len(groups)))
    n_test = min(n_test, len(groups) - 1)
    test = {groups[int(i)] for i in order[:n_test]}
    train = {g for g in groups if g not in test}
    return train, test


def eval_protocol(
    scored: list[ScoredRecord],
    encoder: PretextModel,
    iterations: int = 20,
    train_frac: float = 0.8,
    alpha: float = 1.0,
    seed: int = 0,
    crop_size: int = 256,
    per_scale: bool = False,
    base_dir: str = "",
    group_by_content: bool = True,
    cache: FeatureCache | None = None,
    checkpoint_hash: str = "",
) -> EvalReport:
    """Repeated-split linear-probe evaluation over frozen features.

    Each iteration draws a seeded train/test split (grouped by content id
    unless ``group_by_content`` is false), fits the ridge probe on all
    training crops and scores the holdout images by their crop-averaged
    predictions.  Iterations whose holdout cannot support a correlation
    are skipped with a warning and surfaced in the report.
    """
    if iterations < 1 or not (0.0 < train_frac < 1.0):
        raise DataError("iterations must be >= 1 and 0 < train_frac < 1")
    if len(scored) < 2:
        raise DataError("need at least two scored records")

    policy = f"five-crop:{crop_size}"
    features: list[np.ndarray] = []
    for s in scored:
        path = _resolve(s.record.path, base_dir)
        key = FeatureCache.key(path, checkpoint_hash, policy) if cache is not None else None
        feats = cache.get(key) if cache is not None else None
        if feats is None:
            feats = extract_features(read_image(path), encoder, crop_size=crop_size)
            if cache is not None:
                cache.put(key, feats)
        features.append(feats)
    if cache is not None:
        cache.save()

    qualities = np.array([s.quality for s in scored])
    content_ids = [s.record.content_id for s in scored]
    scales = [s.record.scale for s in scored]

    report = EvalReport(
        config={
            "iterations": iterations,
            "train_frac": train_frac,
            "alpha": alpha,
            "seed": seed,
            "crop_size": crop_size,
            "group_by_content": group_by_content,
            "n_records": len(scored),
        }
    )
    per_scale_rows: dict[str, list[dict]] = {}
    for it in range(iterations):
        rng = derived_rng(seed, "eval-split", it)
        if group_by_content:
            train_groups, test_groups = _split_by_content(content_ids, train_frac, rng)
            train_idx = [i for i, c in enumerate(content_ids) if c in train_groups]
            test_idx = [i for i, c in enumerate(content_ids) if c in test_groups]
        else:
            order = rng.permutation(len(scored))
            n_test = max(1, round((1.0 - train_frac) * len(scored)))
            n_test = min(n_test, len(scored) - 1)
            test_idx = [int(i) for i in order[:n_test]]
            train_idx = [int(i) for i in order[n_test:]]

        X_train = np.vstack([features[i] for i in train_idx])
        y_train = np.repeat(qualities[train_idx], [features[i].shape[0] for i in train_idx])
        try:
            model = ridge_fit(X_train, y_train, alpha)
            preds = np.array([float(model.predict(features[i]).mean()) for i in test_idx])
            truth = qualities[test_idx]
            row = {
                "iteration": it,
                "plcc": plcc(preds, truth),
                "srcc": srcc(preds, truth),
                "n_train": len(train_idx),
                "n_test": len(test_idx),
            }
        except (DataError, NumericError) as exc:
            log.warning("iteration %d skipped: %s", it, exc)
            report.skipped.append({"iteration": it, "reason": str(exc)})
            continue
        report.iterations.append(row)

        if per_scale:
            for scale in sorted({scales[i] for i in test_idx}):
                sel = [k for k, i in enumerate(test_idx) if scales[i] == scale]
                if len(sel) < 2:
                    continue
                try:
                    srow = {
                        "iteration": it,
                        "plcc": plcc(preds[sel], truth[sel]),
                        "srcc": srcc(preds[sel], truth[sel]),
                        "n_test": len(sel),
                    }
                except NumericError:
                    continue
                per_scale_rows.setdefault(f"{scale:g}", []).append(srow)

    for scale, rows in sorted(per_scale_rows.items()):
        report.per_scale[scale] = {
            "plcc_mean": float(np.mean([r["plcc"] for r in rows])),
            "plcc_std": float(np.std([r["plcc"] for r in rows])),
            "srcc_mean": float(np.mean([r["srcc"] for r in rows])),
            "srcc_std": float(np.std([r["srcc"] for r in rows])),
            "iterations": len(rows),
        }
    return report
