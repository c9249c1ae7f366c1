"""Training losses: cosine-margin alignment, shared semantic classification,
and pixel-wise cross-entropy with an ignore index.

All losses are plain tensor functions, differentiable via autograd; the test
suite checks the gradients against central finite differences.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from . import DataError, IGNORE_INDEX


def cosine_margin_loss(
    v: torch.Tensor, t: torch.Tensor, y: int, alpha: float = 0.1
) -> torch.Tensor:
    """Margin loss on the cosine of a vision/text pair.

    Matched pairs (y=+1) pay 1 - cos(v,t); mismatched pairs (y=-1) pay
    max(0, cos(v,t) - alpha). Inputs are normalized internally, so the loss
    is invariant to positive rescaling of either vector.
    """
    if y not in (1, -1):
        raise DataError(f"match flag must be +1 or -1, got {y}")
    nv = torch.linalg.vector_norm(v, dim=-1)
    nt = torch.linalg.vector_norm(t, dim=-1)
    if float(nv.detach().min()) == 0.0 or float(nt.detach().min()) == 0.0:
        raise DataError("cosine margin loss got a zero-norm vector")
    cos = (v * t).sum(dim=-1) / (nv * nt)
    if y == 1:
        loss = 1.0 - cos
    else:
        loss = torch.clamp(cos - alpha, min=0.0)
    return loss.mean()


def semantic_loss(
    v: torch.Tensor,
    t: torch.Tensor,
    label_v: int | None,
    label_t: int | None,
    head_v: torch.nn.Module,
    head_t: torch.nn.Module,
) -> torch.Tensor:
    """Cross-entropy of each modality's classifier head against its semantic
    label. A missing label skips that term (contributes 0)."""
    terms = []
    if label_v is not None:
        logits = head_v(v.unsqueeze(0) if v.ndim == 1 else v)
        target = torch.full((logits.shape[0],), int(label_v), dtype=torch.long, device=v.device)
        terms.append(F.cross_entropy(logits, target))
    if label_t is not None:
        logits = head_t(t.unsqueeze(0) if t.ndim == 1 else t)
        target = torch.full((logits.shape[0],), int(label_t), dtype=torch.long, device=t.device)
        terms.append(F.cross_entropy(logits, target))
    if not terms:
        return torch.zeros((), dtype=v.dtype, device=v.device)
    return sum(terms)


def total_loss(
    v: torch.Tensor,
    t: torch.Tensor,
    y: int,
    label_v: int | None,
    label_t: int | None,
    head_v: torch.nn.Module,
    head_t: torch.nn.Module,
    alpha: float = 0.1,
    lambda_semantic: float = 1.0,
) -> torch.Tensor:
    loss = cosine_margin_loss(v, t, y, alpha)
    if lambda_semantic > 0:
        loss = loss + lambda_semantic * semantic_loss(v, t, label_v, label_t, head_v, head_t)
    return loss


def pixel_ce_loss(
    logits: torch.Tensor, target: torch.Tensor, ignore: int = IGNORE_INDEX
) -> tuple[torch.Tensor, bool]:
    """Mean cross-entropy over non-ignored pixels.

    logits: B x C x H x W (or C x H x W), target: matching integer raster.
    Returns (loss, all_ignored); when every pixel is ignored the loss is a
    well-defined 0 and the flag is set.
    """
    if logits.ndim == 3:
        logits = logits.unsqueeze(0)
        target = target.unsqueeze(0)
    if logits.shape[-2:] != target.shape[-2:] or logits.shape[0] != target.shape[0]:
        raise DataError(
            f"logits spatial shape {tuple(logits.shape)} does not match target {tuple(target.shape)}"
        )
    target = target.long()
    valid = target != ignore
    if not bool(valid.any()):
        return torch.zeros((), dtype=logits.dtype, device=logits.device), True
    loss = F.cross_entropy(logits, target, ignore_index=ignore)
    return loss, False
