"""Pretext optimization loop: SGD with warm-restart cosine annealing.

The published practical settings are the defaults: 60 epochs, batch of 16
items (8 positive pairs), SGD momentum 0.9, weight decay 1e-4, cosine
annealing with warm restarts starting from 1e-3, temperature 0.1, crop
size 256.  Restart internals (first period 10 epochs, period multiplier
2, floor 0) fit the 60 epochs as 10+20+30 and are configurable.

All batch randomness is a pure function of (seed, epoch, batch index), so
a resumed run reproduces the uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import torch

from .errors import CheckpointError, DataError, NumericError
from .net import (
    EncoderConfig,
    HeadConfig,
    PretextModel,
    build_model,
    crops_to_tensor,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import total_loss
from .records import Manifest
from .sampler import EpochSampler

log = logging.getLogger(__name__)

FINAL_CHECKPOINT = "checkpoint-final.pt"
RUN_LOG = "runlog.jsonl"


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_items: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    tau: float = 0.1
    crop_size: int = 256
    t0_epochs: int = 10
    t_mult: int = 2
    lr_min: float = 0.0
    color_transform: bool = True
    auxiliary: bool = True
    head_norm: str = "auto"  # "auto" resolves per the color-transform convergence rule
    norm_position: str = "pre"
    contrastive_reduction: str = "sum"
    tied_color: bool = False
    mix_roles: bool = False
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_items < 2 or self.batch_items % 2:
            raise ValueError("epochs must be >= 1 and batch_items an even count >= 2")
        if self.lr <= 0 or self.tau <= 0 or self.t0_epochs < 1 or self.t_mult < 1:
            raise ValueError("lr, tau, t0_epochs and t_mult must be positive")
        if self.head_norm not in ("auto", "none", "layer-norm"):
            raise ValueError(f"unknown head_norm {self.head_norm!r}")
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.head, dict):
            self.head = HeadConfig(**self.head)

    @property
    def pairs(self) -> int:
        return self.batch_items // 2

    def resolved_head(self) -> HeadConfig:
        """Head normalization: on with the color transform, off without it.

        Without the color-space views all inputs share one distribution and
        hidden layer norms suppress the gradient signal, so the no-color
        ablation forces them off.
        """
        norm = self.head_norm
        if norm == "auto":
            norm = "layer-norm" if self.color_transform else "none"
        return dataclasses.replace(self.head, normalization=norm, norm_position=self.norm_position)

    def config_hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    lr: float = 0.0
    epoch_loss_sum: float = 0.0
    epoch_loss_count: int = 0

    def epoch_mean(self) -> float:
        return self.epoch_loss_sum / max(self.epoch_loss_count, 1)


def lr_at(step: int, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Closed-form warm-restart cosine learning rate at an optimizer step.

    Within restart period i (length T_i = t0 * mult^i epochs):
    lr = lr_min + 0.5 * (lr_max - lr_min) * (1 + cos(pi * t / T_i)).
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    t = step / float(steps_per_epoch)  # continuous epoch time
    t0, mult = float(config.t0_epochs), config.t_mult
    if mult == 1:
        t_in = t % t0
        period = t0
    else:
        i = int(math.floor(math.log((t / t0) * (mult - 1) + 1, mult)))
        start = t0 * (mult**i - 1) / (mult - 1)
        period = t0 * mult**i
        t_in = t - start
        if t_in >= period:  # guard against log rounding at boundaries
            t_in -= period
            period *= mult
    return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1 + math.cos(math.pi * t_in / period))


def _param_groups(model: PretextModel, weight_decay: float):
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (decay if p.ndim >= 2 else no_decay).append(p)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def _append_log(path: str, rows: list[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_run_log(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _build_training_model(config: TrainConfig) -> PretextModel:
    torch.manual_seed(config.seed)
    model = build_model(config.encoder, config.resolved_head())
    model.train()
    return model


def _training_loop(
    model: PretextModel,
    optimizer: torch.optim.SGD,
    manifest: Manifest,
    config: TrainConfig,
    out_dir: str,
    start_epoch: int,
) -> str:
    sampler = EpochSampler(
        manifest,
        pairs=config.pairs,
        seed=config.seed,
        crop_size=config.crop_size,
        color_transform=config.color_transform,
        tied_color=config.tied_color,
        mix_roles=config.mix_roles,
    )
    spe = sampler.batches_per_epoch
    if spe < 1:
        raise DataError(
            f"manifest has {len(sampler.records)} eligible records, fewer than one "
            f"batch of {config.pairs} pairs"
        )
    log_path = os.path.join(out_dir, RUN_LOG)
    if start_epoch and os.path.exists(log_path):
        kept = [r for r in read_run_log(log_path) if r["step"] < start_epoch * spe]
        with open(log_path, "w", encoding="utf-8") as fh:
            for row in kept:
                fh.write(json.dumps(row) + "\n")
    elif not start_epoch and os.path.exists(log_path):
        os.remove(log_path)

    extras = {"config_hash": config.config_hash(), "epoch": start_epoch}
    step = start_epoch * spe
    for epoch in range(start_epoch, config.epochs):
        state = TrainState(step=step, epoch=epoch)
        rows = []
        for b in range(spe):
            batch = sampler.batch(epoch, b)
            x = crops_to_tensor(batch.items)
            _, z, s_hat = model(x)
            breakdown = total_loss(
                z,
                batch.pair_index,
                config.tau,
                s_hat if config.auxiliary else None,
                batch.scales if config.auxiliary else None,
                contrastive_reduction=config.contrastive_reduction,
            )
            if not torch.isfinite(breakdown.total):
                descriptor = {
                    "epoch": epoch,
                    "batch_index": b,
                    "step": step,
                    "records": [list(r.key()) for r in batch.records],
                    "contrastive": float(breakdown.contrastive.detach()),
                    "auxiliary": float(breakdown.auxiliary.detach()),
                }
                dump = os.path.join(out_dir, "diagnostic.json")
                with open(dump, "w", encoding="utf-8") as fh:
                    json.dump(descriptor, fh, indent=2)
                raise NumericError(
                    f"non-finite loss at step {step} (epoch {epoch}, batch {b}); "
                    f"batch descriptor dumped to {dump}"
                )
            lr = lr_at(step, config, steps_per_epoch=spe)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()

            contr_sum = float(breakdown.per_anchor.detach().sum())  # strict-sum logging
            aux_mean = float(breakdown.auxiliary.detach())
            rows.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "L_contr": contr_sum,
                    "L_aux": aux_mean,
                    "L_total": contr_sum + aux_mean,
                    "wall_time": time.time(),
                }
            )
            state.step = step = step + 1
            state.lr = lr
            state.epoch_loss_sum += contr_sum
            state.epoch_loss_count += 1
        _append_log(log_path, rows)
        log.info(
            "epoch %d/%d: mean strict-sum contrastive %.4f",
            epoch + 1,
            config.epochs,
            state.epoch_mean(),
        )
        extras = {
            "config_hash": config.config_hash(),
            "epoch": epoch + 1,
            "optimizer_state": optimizer.state_dict(),
        }
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(
                os.path.join(out_dir, f"checkpoint-epoch{epoch + 1:04d}.pt"),
                model, step, extras,
            )
    final = os.path.join(out_dir, FINAL_CHECKPOINT)
    save_checkpoint(final, model, step, extras)
    return final


def train(manifest: Manifest, config: TrainConfig, out_dir: str) -> str:
    """Run the full pretext optimization; returns the final checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    model = _build_training_model(config)
    optimizer = torch.optim.SGD(
        _param_groups(model, config.weight_decay), lr=config.lr, momentum=config.momentum
    )
    return _training_loop(model, optimizer, manifest, config, out_dir, start_epoch=0)


def resume(checkpoint_path: str, manifest: Manifest, config: TrainConfig, out_dir: str) -> str:
    """Continue an interrupted run with a bit-identical trajectory.

    The checkpoint must come from the same configuration (hash check); a
    finished run is a no-op that returns the final checkpoint unchanged.
    """
    os.makedirs(out_dir, exist_ok=True)
    model, step, extras = load_checkpoint(checkpoint_path)
    if extras.get("config_hash") != config.config_hash():
        raise CheckpointError(
            "checkpoint was produced by a different configuration; "
            "resume requires an identical schedule and model setup"
        )
    start_epoch = int(extras.get("epoch", 0))
    if start_epoch >= config.epochs:
        log.info("run already finished at epoch %d; nothing to resume", start_epoch)
        final = os.path.join(out_dir, FINAL_CHECKPOINT)
        if os.path.abspath(checkpoint_path) != os.path.abspath(final):
            save_checkpoint(final, model, step, extras)
        return final
    model.train()
    optimizer = torch.optim.SGD(
        _param_groups(model, config.weight_decay), lr=config.lr, momentum=config.momentum
    )
    if "optimizer_state" in extras:
        optimizer.load_state_dict(extras["optimizer_state"])
    return _training_loop(model, optimizer, manifest, config, out_dir, start_epoch=start_epoch)
