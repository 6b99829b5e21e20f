"""Contrastive and auxiliary losses with audit-friendly breakdowns.

The contrastive term is the normalized temperature-scaled cross entropy
over in-batch negatives: each item's positive is its pair partner, every
other item is a negative, and the denominator runs over all other items
including the partner (so a single-pair batch cancels to exactly zero and
every per-anchor term is non-negative).  The strict per-anchor sum is the
default reduction; a mean reduction is available so the effective step
size does not scale with batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NumericError


@dataclass
class LossBreakdown:
    """Total = contrastive + auxiliary, kept as tensors for backprop."""

    contrastive: torch.Tensor
    auxiliary: torch.Tensor
    total: torch.Tensor
    per_anchor: torch.Tensor  # contrastive term per batch item
    per_item_aux: torch.Tensor | None  # |s_hat - s| per item, None when disabled


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x)


def cosine_sim(a, b) -> float:
    """Cosine similarity of two non-zero vectors."""
    ta, tb = _as_tensor(a).double().flatten(), _as_tensor(b).double().flatten()
    na, nb = torch.linalg.norm(ta), torch.linalg.norm(tb)
    if na == 0 or nb == 0:
        raise NumericError("cosine similarity of a zero vector is undefined")
    return float(torch.dot(ta, tb) / (na * nb))


def _check_pair_index(pair_index, n: int) -> torch.Tensor:
    idx = list(pair_index)
    if len(idx) != n:
        raise ValueError(f"pair_index length {len(idx)} != batch size {n}")
    for i, j in enumerate(idx):
        if not isinstance(j, (int,)) and not hasattr(j, "__index__"):
            raise ValueError(f"pair_index[{i}] is not an integer")
        j = int(j)
        if j == i or not 0 <= j < n or int(idx[j]) != i:
            raise ValueError("pair_index must be a fixed-point-free involution")
    return torch.tensor([int(j) for j in idx], dtype=torch.long)


def nt_xent_per_anchor(batch_z, pair_index, tau: float) -> torch.Tensor:
    """Per-anchor contrastive terms (length = batch size)."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = _as_tensor(batch_z)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"expected a (n >= 2, d) batch of projections, got {tuple(z.shape)}")
    n = z.shape[0]
    partners = _check_pair_index(pair_index, n)
    norms = torch.linalg.norm(z, dim=1)
    if bool((norms == 0).any()):
        raise NumericError("projection batch contains a zero vector")
    zn = z / norms[:, None]
    sim = (zn @ zn.T) / tau
    sim.fill_diagonal_(float("-inf"))  # the anchor itself never appears
    pos = sim[torch.arange(n), partners]
    return -pos + torch.logsumexp(sim, dim=1)


def nt_xent(batch_z, pair_index, tau: float, reduction: str = "sum") -> torch.Tensor:
    """Contrastive loss over the batch; strict per-anchor sum by default."""
    terms = nt_xent_per_anchor(batch_z, pair_index, tau)
    if reduction == "sum":
        return terms.sum()
    if reduction == "mean":
        return terms.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def aux_l1(predicted, target) -> torch.Tensor:
    """Mean absolute error between predicted and true scale factors."""
    p, t = _as_tensor(predicted).flatten(), _as_tensor(target).flatten()
    if p.shape != t.shape or p.numel() < 1:
        raise ValueError(f"length mismatch: predicted {tuple(p.shape)} vs target {tuple(t.shape)}")
    return (p - t.to(p.dtype)).abs().mean()


def total_loss(
    batch_z,
    pair_index,
    tau: float,
    predicted_scales=None,
    target_scales=None,
    contrastive_reduction: str = "sum",
) -> LossBreakdown:
    """Contrastive plus auxiliary objective.

    Passing ``predicted_scales=None`` disables the auxiliary term (the
    no-auxiliary ablation); the decomposition total = contrastive +
    auxiliary holds bit-exactly either way.
    """
    per_anchor = nt_xent_per_anchor(batch_z, pair_index, tau)
    contrastive = per_anchor.sum() if contrastive_reduction == "sum" else per_anchor.mean()
    if contrastive_reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {contrastive_reduction!r}")
    if predicted_scales is None:
        auxiliary = torch.zeros((), dtype=contrastive.dtype)
        per_item_aux = None
    else:
        p = _as_tensor(predicted_scales).flatten()
        t = _as_tensor(target_scales).flatten()
        if p.shape != t.shape or p.numel() < 1:
            raise ValueError(
                f"length mismatch: predicted {tuple(p.shape)} vs target {tuple(t.shape)}"
            )
        per_item_aux = (p - t.to(p.dtype)).abs()
        auxiliary = per_item_aux.mean()
    total = contrastive + auxiliary
    return LossBreakdown(
        contrastive=contrastive,
        auxiliary=auxiliary,
        total=total,
        per_anchor=per_anchor,
        per_item_aux=per_item_aux,
    )
