"""Training objectives: self-distillation cross-entropy and a contrastive baseline."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F


def dino_loss(
    student_logits: Sequence[torch.Tensor],
    teacher_logits: Sequence[torch.Tensor],
    centre: torch.Tensor,
    tau_s: float,
    tau_t: float,
) -> torch.Tensor:
    """Cross-entropy from sharpened, centred teacher targets to student views.

    ``student_logits`` holds one (batch, prototypes) tensor per view;
    the first ``len(teacher_logits)`` entries are the same global crops the
    teacher saw, so those same-view pairs are skipped. Teacher logits must
    arrive without gradient history; the centre is subtracted from the
    teacher only.
    """
    if tau_s <= 0 or tau_t <= 0:
        raise ValueError("temperatures must be positive")
    if not student_logits or not teacher_logits:
        raise ValueError("need at least one student and one teacher view")
    for t in teacher_logits:
        if t.requires_grad:
            raise ValueError("teacher logits must be detached")

    total = student_logits[0].new_zeros(())
    pairs = 0
    for t_view, t in enumerate(teacher_logits):
        targets = F.softmax((t - centre) / tau_t, dim=-1)
        for s_view, s in enumerate(student_logits):
            if s_view == t_view:
                continue
            log_p = F.log_softmax(s / tau_s, dim=-1)
            total = total + -(targets * log_p).sum(dim=-1).mean()
            pairs += 1
    if pairs == 0:
        raise ValueError("no distinct (teacher view, student view) pairs")
    loss = total / pairs
    if not torch.isfinite(loss):
        raise ValueError("loss is not finite")
    return loss


def ntxent_loss(z1: torch.Tensor, z2: torch.Tensor, temperature: float) -> torch.Tensor:
    """Normalized-temperature cross-entropy between two views of one batch.

    Each embedding is scored against the full bank of other-view embeddings:
    its counterpart is the positive, the rest of the bank are the negatives.
    Symmetric over the two views.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError("views must be two aligned (batch, dim) tensors")
    a = F.normalize(z1, dim=-1)
    b = F.normalize(z2, dim=-1)
    sim = a @ b.T / temperature
    target = torch.arange(sim.shape[0], device=sim.device)
    return 0.5 * (F.cross_entropy(sim, target) + F.cross_entropy(sim.T, target))


def target_distribution(
    teacher_logits: torch.Tensor, centre: torch.Tensor | None, tau_t: float
) -> torch.Tensor:
    """The distribution the student is asked to match, per sample."""
    shifted = teacher_logits if centre is None else teacher_logits - centre
    return F.softmax(shifted / tau_t, dim=-1)


def mean_target_entropy(
    teacher_logits: torch.Tensor, centre: torch.Tensor | None, tau_t: float
) -> float:
    """Entropy of the batch-mean teacher target; the collapse diagnostic.

    Collapse onto one prototype drives this to zero even though individual
    sharpened targets are always low-entropy.
    """
    mean = target_distribution(teacher_logits, centre, tau_t).mean(dim=0)
    mean = mean.clamp_min(1e-12)
    return float(-(mean * mean.log()).sum())
