"""Positive-pair sampling and batch assembly."""

import numpy as np
import pytest

from srqa.errors import SamplerStarvation
from srqa.oracles import oracle_pair_collision_probability
from srqa.records import ImageRecord, Manifest
from srqa.sampler import (
    EpochSampler,
    assemble_batch,
    draw_anchors,
    eligible_records,
    sample_positive,
)

from conftest import toy_records


def records_manifest(n_contents, methods=("m0",), scales=(2.0,)):
    m = Manifest(records=toy_records(n_contents, methods, scales))
    m.validate()
    return m


def test_forced_choice_two_contents():
    m = records_manifest(2)
    anchor = next(r for r in m.records if r.role == "SR")
    other = next(
        r for r in m.records if r.role == "SR" and r.content_id != anchor.content_id
    )
    for seed in range(20):
        assert sample_positive(anchor, m, seed) == other


def test_singleton_group_starves():
    m = records_manifest(1)
    anchor = next(r for r in m.records if r.role == "SR")
    with pytest.raises(SamplerStarvation, match="m0"):
        sample_positive(anchor, m, 0)


def test_partner_frequencies_uniform():
    m = records_manifest(11)
    anchor = next(r for r in m.records if r.role == "SR")
    counts: dict[str, int] = {}
    n = 10_000
    rng = np.random.default_rng(0)
    for _ in range(n):
        partner = sample_positive(anchor, m, rng)
        assert partner.method_id == anchor.method_id
        assert partner.scale == anchor.scale
        assert partner.role == anchor.role
        assert partner.content_id != anchor.content_id
        counts[partner.content_id] = counts.get(partner.content_id, 0) + 1
    assert len(counts) == 10
    p = 1 / 10
    sigma = (n * p * (1 - p)) ** 0.5
    for cid, c in counts.items():
        assert abs(c - n * p) < 5 * sigma, (cid, c)


def test_positive_respects_role_partition():
    m = records_manifest(3)
    ds_anchor = next(r for r in m.records if r.role == "DS")
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert sample_positive(ds_anchor, m, rng).role == "DS"
    mixed_roles = {sample_positive(ds_anchor, m, rng, mix_roles=True).role for _ in range(50)}
    assert mixed_roles == {"SR", "DS"}


def test_assemble_single_pair(forged):
    batch = assemble_batch(forged, 1, seed=0, crop_size=24)
    assert len(batch) == 2
    assert batch.pair_index == [1, 0]
    assert batch.items.shape == (2, 24, 24, 3)


def test_assemble_batch_invariants(forged):
    batch = assemble_batch(forged, 8, seed=3, crop_size=24)
    batch.validate()
    assert len(batch) == 16
    for i, j in enumerate(batch.pair_index):
        assert batch.method_ids[i] == batch.method_ids[j]
        assert batch.scales[i] == batch.scales[j]
        assert batch.content_ids[i] != batch.content_ids[j]


def test_assemble_deterministic(forged):
    a = assemble_batch(forged, 4, seed=7, crop_size=24)
    b = assemble_batch(forged, 4, seed=7, crop_size=24)
    np.testing.assert_array_equal(a.items, b.items)
    assert a.pair_index == b.pair_index
    assert [r.key() for r in a.records] == [r.key() for r in b.records]


def test_assemble_starves_when_too_few_groups():
    m = records_manifest(2)  # 2 contents x 1 method x 1 scale = 2 keys
    with pytest.raises(SamplerStarvation):
        draw_anchors(m, 5, 0)


def test_epoch_coverage_without_replacement(forged):
    sampler = EpochSampler(forged, pairs=3, seed=5, crop_size=24)
    for epoch in (0, 1):
        seen = []
        for chunk in sampler.epoch_anchor_batches(epoch):
            seen.extend(r.key() for r in chunk)
        assert len(seen) == len(set(seen))  # anchor at most once per epoch
        assert len(seen) == sampler.batches_per_epoch * 3
    assert sampler.epoch_anchor_batches(0) != sampler.epoch_anchor_batches(1)
    # pure function of (seed, epoch, index)
    again = EpochSampler(forged, pairs=3, seed=5, crop_size=24)
    a = sampler.batch(0, 1)
    b = again.batch(0, 1)
    np.testing.assert_array_equal(a.items, b.items)


def test_method_collision_rate_matches_enumeration():
    # 6 methods x 4 contents x 1 scale, SR role only keys: group sizes 4 each
    m = records_manifest(4, methods=tuple(f"m{k}" for k in range(6)))
    draws = 3
    trials = 4000
    rng = np.random.default_rng(11)
    hits = 0
    for _ in range(trials):
        anchors = draw_anchors(m, draws, rng)
        methods = [a.method_id for a in anchors]
        hits += len(set(methods)) < len(methods)
    # one key per (method, scale=2, content) and role chosen within the key,
    # so draws are uniform without replacement over 6 groups of 4 keys
    p = oracle_pair_collision_probability([4] * 6, draws)
    sigma = (trials * p * (1 - p)) ** 0.5
    assert abs(hits - trials * p) < 5 * sigma, (hits / trials, p)


def test_eligible_excludes_lr_hr(toy_manifest):
    roles = {r.role for r in eligible_records(toy_manifest)}
    assert roles == {"SR", "DS"}


def test_color_ablation_keeps_flips_only(forged):
    batch = assemble_batch(forged, 2, seed=9, crop_size=24, color_transform=False)
    batch.validate()
    # without color transform every item is a flipped raw crop: all values
    # must appear in the source image's value set (no channel remapping)
    rec = batch.records[0]
    from srqa.forge import read_image

    src = read_image(forged.resolve_path(rec)).astype(np.float32)
    item = batch.items[0]
    assert np.isin(np.round(item, 4), np.round(src, 4)).mean() > 0.99
