"""Siamese masked pre-training.

One shared parameter set encodes two independently masked views of the
same window. The loss is the masked-patch reconstruction error of both
views, optionally plus a cross-view alignment term that pulls the two
patch representations together. Masking hides whole patches; hidden
patches are zeroed, which after per-window instance normalization means
"replaced by the channel mean".
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone
from .layers import Linear, patch_rows, revin_normalize
from .optim import Adam, check_finite
from .tensor import Tensor, masked_select, swap_last


@dataclass
class MaskSpec:
    """Per-sample masking policy over the patch axis.

    A ratio is drawn uniformly from ``[low, high]`` for every sample; the
    masked patch count is the ceiling of ratio * K, clamped so at least
    one patch is masked and at least one survives.
    """

    low: float = 0.15
    high: float = 0.55

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError(f"bad mask ratio range [{self.low}, {self.high}]")


@dataclass
class PretrainBatch:
    """Two masked views of one batch of windows, plus their targets."""

    patches: np.ndarray          # [B, N, K, P], instance-normalized
    mask_a: np.ndarray           # [B, N, K] boolean
    mask_b: np.ndarray           # [B, N, K] boolean


def draw_mask(num_patches: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask over patches; True marks a hidden patch."""
    if num_patches < 2:
        raise ValueError(f"need at least 2 patches to mask, got {num_patches}")
    ratio = rng.uniform(spec.low, spec.high)
    count = math.ceil(ratio * num_patches)
    count = min(max(count, 1), num_patches - 1)
    idx = rng.choice(num_patches, size=count, replace=False)
    mask = np.zeros(num_patches, dtype=bool)
    mask[idx] = True
    return mask


def draw_masks(shape: tuple, num_patches: int, spec: MaskSpec,
               rng: np.random.Generator, shared_channels: bool = False) -> np.ndarray:
    """Stack of per-sample masks with leading shape ``shape``.

    By default every channel draws its own mask; ``shared_channels`` reuses
    one mask per window across channels (the last leading axis is then the
    channel axis).
    """
    if shared_channels and len(shape) >= 2:
        base = np.empty(shape[:-1] + (num_patches,), dtype=bool)
        for i in np.ndindex(shape[:-1]):
            base[i] = draw_mask(num_patches, spec, rng)
        return np.broadcast_to(base[..., None, :], shape + (num_patches,)).copy()
    out = np.empty(shape + (num_patches,), dtype=bool)
    for i in np.ndindex(shape):
        out[i] = draw_mask(num_patches, spec, rng)
    return out


def apply_mask(xp, mask: np.ndarray):
    """Zero masked patch columns of a ``[P, K]`` patch matrix."""
    data = xp.data if isinstance(xp, Tensor) else np.asarray(xp, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (data.shape[-1],):
        raise ValueError(f"mask length {mask.shape} != patch count {data.shape[-1]}")
    out = data.copy()
    out[..., mask] = 0.0
    return Tensor(out) if isinstance(xp, Tensor) else out


def _mask_rows(patches: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero masked patches in row layout ``[..., K, P]``; mask is ``[..., K]``."""
    out = patches.copy()
    out[mask] = 0.0
    return out


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """MSE restricted to masked positions; unmasked predictions are free.

    ``pred`` and ``target`` are patch rows ``[..., K, P]``; ``mask`` is
    ``[..., K]`` and selects which patches count.
    """
    if not mask.any():
        raise ValueError("mask selects zero positions; nothing to reconstruct")
    full_mask = np.broadcast_to(mask[..., None], pred.shape)
    diff = pred - Tensor(target)
    return masked_select(diff * diff, full_mask).mean()


def reconstruction_loss(z: Tensor, targets, mask: np.ndarray,
                        recon_head: Linear) -> Tensor:
    """Masked reconstruction error for encoded channels.

    ``z`` is ``[N, D, K]`` (or batched ``[..., D, K]``), ``targets`` the
    matching ``[..., P, K]`` patch matrices, ``mask`` the ``[..., K]``
    boolean patch selector.
    """
    target_data = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    pred_rows = recon_head(swap_last(z))                  # [..., K, P]
    target_rows = np.swapaxes(target_data, -1, -2)
    return masked_mse(pred_rows, target_rows, np.asarray(mask, dtype=bool))


def cross_view_alignment(za: Tensor, zb: Tensor, eps: float = 1e-12) -> Tensor:
    """Mean (1 - cosine) between matching patch representations.

    Computed as half the squared distance of unit-normalized vectors, which
    is identical to 1 - cosine but returns an exact zero when the two views
    coincide bit for bit.
    """
    def unit(t: Tensor) -> Tensor:
        sq = (t * t).sum(axis=-1, keepdims=True)
        return t * (sq + eps) ** -0.5

    diff = unit(za) - unit(zb)
    return (diff * diff).sum(axis=-1).mean() * 0.5


@dataclass
class SiameseLoss:
    total: Tensor
    recon_a: float
    recon_b: float
    alignment: float


def siamese_step(batch: PretrainBatch, backbone: Backbone, recon_head: Linear,
                 lambda_sim: float) -> SiameseLoss:
    """Forward both masked views through the one shared backbone.

    Loss = recon(view A) + recon(view B) + lambda_sim * alignment. With
    ``lambda_sim == 0`` this is exactly the sum of two independent masked
    reconstruction problems sharing parameters.
    """
    if lambda_sim < 0:
        raise ValueError(f"lambda_sim must be >= 0, got {lambda_sim}")
    patches = batch.patches
    tokens_a = backbone.encode_tokens(Tensor(_mask_rows(patches, batch.mask_a)))
    tokens_b = backbone.encode_tokens(Tensor(_mask_rows(patches, batch.mask_b)))
    loss_a = masked_mse(recon_head(tokens_a), patches, batch.mask_a)
    loss_b = masked_mse(recon_head(tokens_b), patches, batch.mask_b)
    align = cross_view_alignment(tokens_a, tokens_b)
    total = loss_a + loss_b
    if lambda_sim > 0:
        total = total + lambda_sim * align
    return SiameseLoss(total=total, recon_a=loss_a.item(), recon_b=loss_b.item(),
                       alignment=align.item())


@dataclass
class PretrainResult:
    backbone: Backbone
    recon_head: Linear
    log: list = field(default_factory=list)  # rows of per-epoch aggregates


def make_pretrain_batch(windows: np.ndarray, num_patches: int, patch_len: int,
                        spec: MaskSpec, rng: np.random.Generator,
                        shared_channels: bool = False,
                        revin_eps: float = 1e-5) -> PretrainBatch:
    """Instance-normalize windows ``[B, N, L]`` and draw two mask sets."""
    normed, _state = revin_normalize(windows, eps=revin_eps)
    patches = patch_rows(normed, patch_len)
    lead = patches.shape[:-2]
    mask_a = draw_masks(lead, num_patches, spec, rng, shared_channels=shared_channels)
    mask_b = draw_masks(lead, num_patches, spec, rng, shared_channels=shared_channels)
    return PretrainBatch(patches=patches, mask_a=mask_a, mask_b=mask_b)


def pretrain(windows: np.ndarray, backbone: Backbone, *, epochs: int,
             batch_size: int, lr: float, mask_spec: MaskSpec, lambda_sim: float,
             seed: int, shared_channel_mask: bool = False,
             revin_eps: float = 1e-5, log_path=None) -> PretrainResult:
    """Run masked Siamese pre-training over ``windows`` ``[num, N, L]``.

    Deterministic under a fixed seed. Returns the trained backbone, the
    reconstruction head (discarded at fine-tuning), and the per-epoch log.
    Aborts with a diagnostic if the loss turns non-finite.
    """
    if windows.shape[0] == 0:
        raise ValueError("pretrain: empty training set")
    rng = np.random.default_rng(seed)
    recon_head = Linear(backbone.d_model, backbone.patch_len, bias=True, rng=rng)
    params = backbone.parameters() + [("recon." + n, p) for n, p in recon_head.parameters()]
    opt = Adam(params, lr=lr)
    num = windows.shape[0]
    log_rows = []
    for epoch in range(1, epochs + 1):
        t0 = time.monotonic()
        order = rng.permutation(num)
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, num, batch_size):
            batch_windows = windows[order[start:start + batch_size]]
            batch = make_pretrain_batch(batch_windows, backbone.num_patches,
                                        backbone.patch_len, mask_spec, rng,
                                        shared_channels=shared_channel_mask,
                                        revin_eps=revin_eps)
            loss = siamese_step(batch, backbone, recon_head, lambda_sim)
            check_finite(loss.total.item(), f"pretrain epoch {epoch}")
            opt.zero_grad()
            loss.total.backward()
            opt.step()
            sums += (loss.recon_a, loss.recon_b, loss.alignment, loss.total.item())
            n_batches += 1
        means = sums / n_batches
        log_rows.append({
            "epoch": epoch,
            "recon_loss_A": means[0],
            "recon_loss_B": means[1],
            "sim_loss": means[2],
            "total": means[3],
            "wall_time": time.monotonic() - t0,
        })
    if log_path is not None:
        write_training_log(log_path, log_rows)
    return PretrainResult(backbone=backbone, recon_head=recon_head, log=log_rows)


def write_training_log(path, rows):
    """Append-only CSV training log."""
    fields = ["epoch", "recon_loss_A", "recon_loss_B", "sim_loss", "total", "wall_time"]
    exists = os.path.exists(os.fspath(path))
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        if not exists:
            writer.writeheader()
        writer.writerows(
            {k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()}
            for row in rows
        )
