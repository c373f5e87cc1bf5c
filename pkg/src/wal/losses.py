"""Training losses: KL prediction loss, classified-MMD domain loss, and
the correction regression loss, plus their weighted combination.

All functions are torch-differentiable and dtype-preserving: float64
inputs are evaluated in float64 (oracle tests rely on this), training
tensors stay float32. Vectors or batches are accepted; batched inputs
are averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DataError

TARGET_EPS = 1e-8

KL_DIRECTIONS = ("pred-target", "target-pred")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _pairable(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DataError(f"{op}: vector lengths differ ({a.shape[-1]} vs {b.shape[-1]})")


@dataclass
class LossValue:
    """A combined loss with its addends. value == components['kl'] +
    alpha * components['cmmd'], exactly."""

    value: torch.Tensor
    components: dict = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value)


def clamp_label_target(target: torch.Tensor) -> torch.Tensor:
    """Clamp a (possibly unnormalized) label target into a usable
    distribution: entries into [eps, 1], then renormalized to sum 1.
    Relabeled targets are stored raw and pass through here at use time."""
    clamped = target.clamp(TARGET_EPS, 1.0)
    return clamped / clamped.sum(dim=-1, keepdim=True)


def kl_loss(pred, target, direction: str = "pred-target") -> torch.Tensor:
    """KL divergence between a predicted distribution and a label target.

    The default direction puts the prediction first: sum_c pred_c *
    ln(pred_c / target_c). 'target-pred' is the conventional
    cross-entropy-style direction, kept as a switch. The target is
    clamped and renormalized before evaluation; batches are averaged.
    """
    if direction not in KL_DIRECTIONS:
        raise DataError(f"direction must be one of {KL_DIRECTIONS}, got {direction!r}")
    p = _as_tensor(pred)
    t = _as_tensor(target)
    _pairable(p, t, "kl_loss")
    t = clamp_label_target(t)
    if direction == "target-pred":
        p, t = t, p.clamp_min(TARGET_EPS)
    per_row = (torch.xlogy(p, p) - p * torch.log(t)).sum(dim=-1)
    return per_row.mean()


def kl_loss_from_logits(logits, target, direction: str = "pred-target") -> torch.Tensor:
    """kl_loss evaluated from pre-softmax logits via log_softmax.

    Same function as kl_loss(softmax(logits), target), but safe when the
    float32 softmax underflows to exact zeros (training drives logits far
    apart; log of a zero probability would poison the backward pass).
    """
    if direction not in KL_DIRECTIONS:
        raise DataError(f"direction must be one of {KL_DIRECTIONS}, got {direction!r}")
    z = logits if isinstance(logits, torch.Tensor) else _as_tensor(logits)
    t = clamp_label_target(_as_tensor(target))
    _pairable(z, t, "kl_loss_from_logits")
    log_p = torch.log_softmax(z, dim=-1)
    if direction == "pred-target":
        p = torch.exp(log_p)
        per_row = (p * (log_p - torch.log(t))).sum(dim=-1)
    else:
        per_row = (torch.xlogy(t, t) - t * log_p).sum(dim=-1)
    return per_row.mean()


def cmmd_loss(source_outputs, source_classes, target_outputs, target_classes,
              num_classes: int) -> torch.Tensor:
    """Classified-MMD: per-class distance between domain mean outputs.

    Rows are grouped by their weak-label argmax class; for every class
    present in BOTH domains the L2 distance between the two class-mean
    output vectors is taken, and the result is the average over those
    classes (0 if no class is shared in the batch, e.g. tiny batches).
    """
    src = _as_tensor(source_outputs)
    tgt = _as_tensor(target_outputs)
    _pairable(src, tgt, "cmmd_loss")
    src_c = torch.as_tensor(np.asarray(source_classes, dtype=np.int64))
    tgt_c = torch.as_tensor(np.asarray(target_classes, dtype=np.int64))
    gaps = []
    for c in range(num_classes):
        src_mask = src_c == c
        tgt_mask = tgt_c == c
        if bool(src_mask.any()) and bool(tgt_mask.any()):
            gap = src[src_mask].mean(dim=0) - tgt[tgt_mask].mean(dim=0)
            sumsq = (gap**2).sum()
            # at an exactly-zero gap the norm's gradient is undefined;
            # 0 is a valid subgradient and keeps training finite
            gaps.append(torch.sqrt(sumsq) if float(sumsq.detach()) > 0.0 else sumsq)
    if not gaps:
        return src.new_zeros(())
    return torch.stack(gaps).mean()


def discrepancy_loss(correction, y_t, yw) -> torch.Tensor:
    """Squared error between the predicted correction and the gap
    (ground truth minus weak label); mean over the batch."""
    c = _as_tensor(correction)
    t = _as_tensor(y_t)
    w = _as_tensor(yw)
    _pairable(c, t, "discrepancy_loss")
    _pairable(c, w, "discrepancy_loss")
    per_row = ((c - (t - w)) ** 2).sum(dim=-1)
    return per_row.mean()


def combined_loss(pred, target, cmmd_value, alpha: float,
                  direction: str = "pred-target") -> LossValue:
    """KL + alpha * CMMD, with both addends recorded."""
    if alpha < 0:
        raise DataError(f"alpha must be >= 0, got {alpha}")
    kl = kl_loss(pred, target, direction=direction)
    cmmd = cmmd_value if isinstance(cmmd_value, torch.Tensor) else _as_tensor(cmmd_value)
    value = kl + alpha * cmmd
    return LossValue(value=value, components={"kl": kl, "cmmd": cmmd})
