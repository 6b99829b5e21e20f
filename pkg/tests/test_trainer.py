"""Learning-rate schedule, training loop bookkeeping, resume semantics."""

import math
import os

import numpy as np
import pytest
import torch

from srqa.errors import CheckpointError, DataError, NumericError
from srqa.net import HeadConfig, desk_encoder_config, load_checkpoint
from srqa.trainer import TrainConfig, lr_at, read_run_log, resume, train

from conftest import make_scene


def desk_config(**kw) -> TrainConfig:
    base = dict(
        epochs=1,
        batch_items=4,
        crop_size=24,
        encoder=desk_encoder_config(16),
        head=HeadConfig(d_hidden=16, d_proj=8),
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule_endpoints():
    cfg = desk_config(lr=1e-3, t0_epochs=10, t_mult=2, lr_min=0.0)
    assert lr_at(0, cfg) == pytest.approx(1e-3, abs=1e-15)  # starts at lr_max
    # middle of the first 10-epoch period, one step per epoch
    assert lr_at(5, cfg) == pytest.approx(5e-4, abs=1e-12)
    # restart boundaries: periods are 10, 20, 40 epochs
    assert lr_at(10, cfg) == pytest.approx(1e-3, abs=1e-12)
    assert lr_at(30, cfg) == pytest.approx(1e-3, abs=1e-12)
    assert lr_at(20, cfg) == pytest.approx(5e-4, abs=1e-12)  # middle of period 2


def test_lr_schedule_step_granularity_and_floor():
    cfg = desk_config(lr=2e-3, t0_epochs=2, t_mult=1, lr_min=5e-4)
    spe = 10
    vals = [lr_at(s, cfg, steps_per_epoch=spe) for s in range(4 * spe)]
    assert vals[0] == pytest.approx(2e-3)
    assert min(vals) >= 5e-4 - 1e-15
    assert vals[2 * spe] == pytest.approx(2e-3)  # constant-period restart
    # strictly decreasing within a period
    assert all(a > b for a, b in zip(vals[: 2 * spe - 1], vals[1 : 2 * spe]))
    mid = lr_at(spe, cfg, steps_per_epoch=spe)
    assert mid == pytest.approx(5e-4 + 0.5 * (2e-3 - 5e-4), abs=1e-12)


def test_lr_closed_form_matches_piecewise_simulation():
    cfg = desk_config(lr=1.0, t0_epochs=3, t_mult=2, lr_min=0.1)
    # simulate the restart bookkeeping step by step
    t_in, period = 0.0, 3.0
    for step in range(200):
        expect = 0.1 + 0.5 * (1.0 - 0.1) * (1 + math.cos(math.pi * t_in / period))
        assert lr_at(step, cfg, steps_per_epoch=7) == pytest.approx(expect, abs=1e-9)
        t_in += 1 / 7
        if t_in >= period - 1e-12:
            t_in -= period
            period *= 2


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    from srqa.forge import DegradationOperator, forge, write_image

    root = tmp_path_factory.mktemp("trainset")
    lr_dir = root / "lr"
    lr_dir.mkdir()
    gen = np.random.default_rng(7)
    for i in range(4):
        write_image(str(lr_dir / f"s{i}.png"), make_scene(gen, 24))
    bank = [
        DegradationOperator("nn", "interpolation", {"kernel": "nearest"}, frozenset((2.0,))),
        DegradationOperator(
            "smooth", "blur-then-upsample", {"sigma": 1.5, "kernel": "bicubic"}, frozenset((2.0,))
        ),
    ]
    return forge(str(lr_dir), bank, [2.0], str(root / "out"), seed=0)


def test_train_bookkeeping(tiny_dataset, tmp_path):
    out = str(tmp_path / "run")
    cfg = desk_config(epochs=1)
    ckpt = train(tiny_dataset, cfg, out)
    assert os.path.exists(ckpt)
    rows = read_run_log(os.path.join(out, "runlog.jsonl"))
    # 16 eligible records / 2 pairs = 8 batches in the single epoch
    assert len(rows) == 8
    assert [r["step"] for r in rows] == list(range(8))
    for r in rows:
        assert r["lr"] == pytest.approx(lr_at(r["step"], cfg, steps_per_epoch=8), abs=1e-15)
        assert r["L_total"] == pytest.approx(r["L_contr"] + r["L_aux"], abs=1e-9)
    model, step, extras = load_checkpoint(ckpt)
    assert step == 8
    assert extras["epoch"] == 1


def test_train_deterministic(tiny_dataset, tmp_path):
    cfg = desk_config(epochs=2)
    train(tiny_dataset, cfg, str(tmp_path / "a"))
    train(tiny_dataset, cfg, str(tmp_path / "b"))
    ra = read_run_log(str(tmp_path / "a" / "runlog.jsonl"))
    rb = read_run_log(str(tmp_path / "b" / "runlog.jsonl"))
    assert abs(ra[-1]["L_total"] - rb[-1]["L_total"]) < 1e-6
    ma, _, _ = load_checkpoint(str(tmp_path / "a" / "checkpoint-final.pt"))
    mb, _, _ = load_checkpoint(str(tmp_path / "b" / "checkpoint-final.pt"))
    for pa, pb in zip(ma.parameters(), mb.parameters()):
        assert torch.equal(pa, pb)


def test_resume_bit_identical(tiny_dataset, tmp_path):
    cfg = desk_config(epochs=3, checkpoint_every=1)
    full = train(tiny_dataset, cfg, str(tmp_path / "full"))
    # rebuild the same run elsewhere, then continue from its epoch-1 checkpoint
    train(tiny_dataset, cfg, str(tmp_path / "pre"))
    mid = str(tmp_path / "pre" / "checkpoint-epoch0001.pt")
    resumed = resume(mid, tiny_dataset, cfg, str(tmp_path / "pre"))
    mf, sf, _ = load_checkpoint(full)
    mr, sr, _ = load_checkpoint(resumed)
    assert sf == sr
    for pa, pb in zip(mf.parameters(), mr.parameters()):
        assert torch.equal(pa, pb)
    rows_full = read_run_log(str(tmp_path / "full" / "runlog.jsonl"))
    rows_res = read_run_log(str(tmp_path / "pre" / "runlog.jsonl"))
    assert [r["L_total"] for r in rows_full] == [r["L_total"] for r in rows_res]


def test_resume_config_mismatch(tiny_dataset, tmp_path):
    cfg = desk_config(epochs=2, checkpoint_every=1)
    train(tiny_dataset, cfg, str(tmp_path / "run"))
    altered = desk_config(epochs=2, checkpoint_every=1, t0_epochs=5)
    with pytest.raises(CheckpointError, match="different configuration"):
        resume(
            str(tmp_path / "run" / "checkpoint-epoch0001.pt"),
            tiny_dataset,
            altered,
            str(tmp_path / "run"),
        )


def test_resume_finished_run_noop(tiny_dataset, tmp_path, caplog):
    cfg = desk_config(epochs=1)
    ckpt = train(tiny_dataset, cfg, str(tmp_path / "run"))
    with caplog.at_level("INFO"):
        again = resume(ckpt, tiny_dataset, cfg, str(tmp_path / "run"))
    assert again == ckpt
    assert any("nothing to resume" in r.message for r in caplog.records)


def test_nonfinite_loss_aborts_with_descriptor(tiny_dataset, tmp_path):
    cfg = desk_config(epochs=2, lr=1e18, momentum=0.99)
    with pytest.raises(NumericError, match="non-finite loss"):
        train(tiny_dataset, cfg, str(tmp_path / "boom"))
    assert os.path.exists(str(tmp_path / "boom" / "diagnostic.json"))


def test_train_requires_enough_records(tmp_path, toy_manifest):
    # records exist but image files do not matter: starves before loading
    cfg = desk_config(batch_items=200)
    with pytest.raises(DataError, match="fewer than one batch"):
        train(toy_manifest, cfg, str(tmp_path / "x"))


def test_ablation_flags_change_model_shape(tiny_dataset, tmp_path):
    base = desk_config()
    no_color = desk_config(color_transform=False)
    assert base.resolved_head().normalization == "layer-norm"
    assert no_color.resolved_head().normalization == "none"
    out = str(tmp_path / "nocolor")
    train(tiny_dataset, no_color, out)
    model, _, _ = load_checkpoint(os.path.join(out, "checkpoint-final.pt"))
    assert isinstance(model.projection.norm, torch.nn.Identity)


def test_no_auxiliary_ablation_logs_zero_aux(tiny_dataset, tmp_path):
    out = str(tmp_path / "noaux")
    train(tiny_dataset, desk_config(auxiliary=False), out)
    rows = read_run_log(os.path.join(out, "runlog.jsonl"))
    assert all(r["L_aux"] == 0.0 for r in rows)


def test_aux_learns_scale_signal(tiny_dataset, tmp_path):
    # after a short run the auxiliary loss should drop from its start
    out = str(tmp_path / "aux")
    train(tiny_dataset, desk_config(epochs=6, lr=5e-3), out)
    rows = read_run_log(os.path.join(out, "runlog.jsonl"))
    first = np.mean([r["L_aux"] for r in rows[:8]])
    last = np.mean([r["L_aux"] for r in rows[-8:]])
    assert last < first
