"""Mini-batch construction for the contrastive pretext task.

Positive pairs are two crops from images produced by the same method at
the same scale but with different content; every other item in the batch
is an implicit negative.  Half-scale (DS) records pair among themselves
by default so a positive pair never mixes resolutions, which would
conflate resolution with method identity; ``mix_roles`` allows the other
reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import random_flip, sample_view, to_color_space, COLOR_SPACES
from .errors import SamplerStarvation
from .forge import CropSpec, crop, read_image
from .records import ImageRecord, Manifest
from .rngutil import as_rng, derived_rng


@dataclass
class PairBatch:
    """2P view crops with the positive-pair involution and per-item labels."""

    items: np.ndarray  # (2P, size, size, 3)
    pair_index: list[int]
    method_ids: list[str]
    scales: list[float]
    content_ids: list[str]
    records: list[ImageRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pair_index)

    def validate(self) -> None:
        n = len(self.pair_index)
        if n < 2 or n % 2:
            raise ValueError(f"batch must hold an even number >= 2 of items, got {n}")
        for i, j in enumerate(self.pair_index):
            if j == i or not 0 <= j < n or self.pair_index[j] != i:
                raise ValueError(f"pair_index is not a fixed-point-free involution at {i}")
            if self.method_ids[i] != self.method_ids[j] or self.scales[i] != self.scales[j]:
                raise ValueError(f"pair ({i},{j}) does not share (method_id, scale)")
            if self.content_ids[i] == self.content_ids[j]:
                raise ValueError(f"pair ({i},{j}) shares content {self.content_ids[i]!r}")
        for rec in self.records:
            if rec.role not in ("SR", "DS"):
                raise ValueError(f"batch contains non-SR/DS record {rec.key()}")


def eligible_records(manifest: Manifest) -> list[ImageRecord]:
    """Records that may appear in pretext batches (SR and DS roles)."""
    return manifest.by_role("SR", "DS")


def _group_key(rec: ImageRecord, mix_roles: bool):
    return (rec.method_id, rec.scale) if mix_roles else (rec.method_id, rec.scale, rec.role)


def _groups(manifest: Manifest, mix_roles: bool) -> dict:
    groups: dict = {}
    for rec in eligible_records(manifest):
        groups.setdefault(_group_key(rec, mix_roles), []).append(rec)
    return groups


def sample_positive(
    anchor: ImageRecord, manifest: Manifest, seed, mix_roles: bool = False
) -> ImageRecord:
    """Uniform draw of a same-(method, scale) record with different content."""
    rng = as_rng(seed)
    key = _group_key(anchor, mix_roles)
    candidates = [
        rec
        for rec in _groups(manifest, mix_roles).get(key, [])
        if rec.content_id != anchor.content_id
    ]
    if not candidates:
        raise SamplerStarvation(
            f"no positive partner for group (method_id={anchor.method_id!r}, "
            f"scale={anchor.scale:g}) with content != {anchor.content_id!r}"
        )
    return candidates[int(rng.integers(0, len(candidates)))]


def draw_anchors(manifest: Manifest, pairs: int, seed) -> list[ImageRecord]:
    """Anchors drawn without replacement across (method, scale, content) keys."""
    rng = as_rng(seed)
    by_key: dict = {}
    for rec in eligible_records(manifest):
        by_key.setdefault((rec.method_id, rec.scale, rec.content_id), []).append(rec)
    keys = sorted(by_key)
    if len(keys) < pairs:
        raise SamplerStarvation(
            f"manifest has only {len(keys)} (method, scale, content) keys, "
            f"need {pairs} anchors"
        )
    chosen = rng.choice(len(keys), size=pairs, replace=False)
    anchors = []
    for idx in chosen:
        recs = by_key[keys[int(idx)]]
        anchors.append(recs[int(rng.integers(0, len(recs)))])
    return anchors


def _make_view(img: np.ndarray, rng, crop_size: int, color_transform: bool, space=None):
    window = crop(img, CropSpec(size=crop_size, position="random"), rng=rng)
    if not color_transform:
        return random_flip(window, rng)
    if space is not None:
        return random_flip(to_color_space(window, space), rng)
    return sample_view(window, rng)


def assemble_batch(
    manifest: Manifest,
    pairs: int,
    seed,
    *,
    crop_size: int = 256,
    color_transform: bool = True,
    tied_color: bool = False,
    mix_roles: bool = False,
    anchors: list[ImageRecord] | None = None,
) -> PairBatch:
    """Build a batch of ``pairs`` positive pairs (2 x pairs items).

    Anchors are drawn without replacement across (method, scale, content)
    keys unless an explicit anchor list is supplied (the epoch scheduler
    does this).  Both members of a pair get an independent random crop and
    view; ``tied_color`` forces one shared color-space draw per pair.
    """
    if pairs < 1:
        raise ValueError(f"pairs must be >= 1, got {pairs}")
    rng = as_rng(seed)
    if anchors is None:
        anchors = draw_anchors(manifest, pairs, rng)
    elif len(anchors) != pairs:
        raise ValueError(f"anchor list length {len(anchors)} != pairs {pairs}")

    items, pair_index, method_ids, scales, content_ids, records = [], [], [], [], [], []
    for anchor in anchors:
        partner = sample_positive(anchor, manifest, rng, mix_roles=mix_roles)
        space = None
        if color_transform and tied_color:
            space = COLOR_SPACES[int(rng.integers(0, len(COLOR_SPACES)))]
        for rec in (anchor, partner):
            img = read_image(manifest.resolve_path(rec))
            items.append(_make_view(img, rng, crop_size, color_transform, space))
            method_ids.append(rec.method_id)
            scales.append(rec.scale)
            content_ids.append(rec.content_id)
            records.append(rec)
        base = len(items) - 2
        pair_index.extend([base + 1, base])

    batch = PairBatch(
        items=np.stack(items).astype(np.float32),
        pair_index=pair_index,
        method_ids=method_ids,
        scales=scales,
        content_ids=content_ids,
        records=records,
    )
    batch.validate()
    return batch


class EpochSampler:
    """Without-replacement anchor scheduling over epochs.

    Epoch ``e`` is a seeded permutation of all eligible records chunked
    into batches of P anchors (remainder dropped); every eligible record
    is an anchor at most once per epoch, and batch content is a pure
    function of (seed, epoch, batch index).
    """

    def __init__(
        self,
        manifest: Manifest,
        pairs: int,
        seed: int,
        *,
        crop_size: int = 256,
        color_transform: bool = True,
        tied_color: bool = False,
        mix_roles: bool = False,
    ):
        self.manifest = manifest
        self.pairs = int(pairs)
        self.seed = int(seed)
        self.crop_size = int(crop_size)
        self.color_transform = color_transform
        self.tied_color = tied_color
        self.mix_roles = mix_roles
        self.records = sorted(eligible_records(manifest), key=lambda r: r.key())
        if len(self.records) < 2:
            raise SamplerStarvation("manifest has fewer than two eligible records")

    @property
    def batches_per_epoch(self) -> int:
        return len(self.records) // self.pairs

    def epoch_anchor_batches(self, epoch: int) -> list[list[ImageRecord]]:
        rng = derived_rng(self.seed, "epoch-permutation", epoch)
        order = rng.permutation(len(self.records))
        chunks = []
        for b in range(self.batches_per_epoch):
            idx = order[b * self.pairs : (b + 1) * self.pairs]
            chunks.append([self.records[int(i)] for i in idx])
        return chunks

    def batch(self, epoch: int, batch_index: int) -> PairBatch:
        anchors = self.epoch_anchor_batches(epoch)[batch_index]
        return assemble_batch(
            self.manifest,
            self.pairs,
            derived_rng(self.seed, "batch", epoch, batch_index),
            crop_size=self.crop_size,
            color_transform=self.color_transform,
            tied_color=self.tied_color,
            mix_roles=self.mix_roles,
            anchors=anchors,
        )
