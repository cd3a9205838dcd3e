"""Small encoder + prototype head, and the student/teacher training state."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class Encoder(nn.Module):
    """MLP over a flattened, fixed-size crop. The objective is the artifact
    here, not the architecture, so this stays deliberately small.

    Inputs are standardized per sample, which cancels brightness/contrast
    shifts exactly and leaves the network to learn geometric invariances.
    """

    def __init__(self, input_size: int = 32, channels: int = 3, hidden: int = 256, embed_dim: int = 64):
        super().__init__()
        self.input_size = input_size
        self.net = nn.Sequential(
            nn.Flatten(),
            nn.Linear(channels * input_size * input_size, hidden),
            nn.LayerNorm(hidden),
            nn.GELU(),
            nn.Linear(hidden, hidden),
            nn.LayerNorm(hidden),
            nn.GELU(),
            nn.Linear(hidden, embed_dim),
        )

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        if crops.shape[-1] != self.input_size or crops.shape[-2] != self.input_size:
            crops = F.interpolate(
                crops, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False
            )
        flat = crops.reshape(crops.shape[0], -1)
        mean = flat.mean(dim=1, keepdim=True)
        std = flat.std(dim=1, keepdim=True).clamp_min(1e-5)
        crops = ((flat - mean) / std).reshape(crops.shape)
        return self.net(crops)


class PrototypeHead(nn.Module):
    """Projection to prototype scores as cosines: the bottleneck feature is
    L2-normalized and scored against unit-norm prototype vectors, so logits
    keep an O(1) spread and cannot shrink to constants (which would make
    every target uniform and stall training)."""

    def __init__(self, embed_dim: int = 64, hidden: int = 128, prototypes: int = 32, bottleneck: int = 32):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, bottleneck),
        )
        self.prototypes_weight = nn.Parameter(torch.randn(prototypes, bottleneck))

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        z = F.normalize(self.mlp(embeddings), dim=-1)
        w = F.normalize(self.prototypes_weight, dim=-1)
        return F.linear(z, w)


class DistillNet(nn.Module):
    """Encoder + prototype head; ``embed`` exposes the retrieval feature."""

    def __init__(self, input_size=32, channels=3, hidden=256, embed_dim=64, prototypes=32):
        super().__init__()
        self.encoder = Encoder(input_size, channels, hidden, embed_dim)
        self.head = PrototypeHead(embed_dim, hidden // 2, prototypes)
        self.prototypes = prototypes

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(crops))

    def embed(self, crops: torch.Tensor) -> torch.Tensor:
        return self.encoder(crops)


@dataclass
class DinoState:
    """Student/teacher pair plus the anti-collapse bookkeeping.

    The teacher is a frozen copy updated only by EMA; the centre tracks the
    running mean of teacher logits. tau_t must stay below tau_s.
    """

    student: DistillNet
    teacher: DistillNet
    centre: torch.Tensor
    tau_s: float
    tau_t: float
    momentum: float
    centre_momentum: float

    def validate(self) -> None:
        if not 0.0 < self.tau_t < self.tau_s:
            raise ValueError("need 0 < tau_t < tau_s")
        if not 0.0 < self.momentum <= 1.0 or not 0.0 <= self.centre_momentum < 1.0:
            raise ValueError("momenta out of range")
        if self.centre.shape != (self.student.prototypes,):
            raise ValueError("centre must have one entry per prototype")
        if any(p.requires_grad for p in self.teacher.parameters()):
            raise ValueError("teacher parameters must not require grad")


def make_state(
    tau_s: float = 0.1,
    tau_t: float = 0.04,
    momentum: float = 0.992,
    centre_momentum: float = 0.9,
    **net_kwargs,
) -> DinoState:
    student = DistillNet(**net_kwargs)
    teacher = DistillNet(**net_kwargs)
    teacher.load_state_dict(student.state_dict())
    for p in teacher.parameters():
        p.requires_grad_(False)
    state = DinoState(
        student=student,
        teacher=teacher,
        centre=torch.zeros(student.prototypes),
        tau_s=tau_s,
        tau_t=tau_t,
        momentum=momentum,
        centre_momentum=centre_momentum,
    )
    state.validate()
    return state


@torch.no_grad()
def update_teacher(state: DinoState) -> None:
    """teacher <- m * teacher + (1 - m) * student, elementwise and exact."""
    m = state.momentum
    for t, s in zip(state.teacher.parameters(), state.student.parameters()):
        t.mul_(m).add_(s.detach(), alpha=1.0 - m)
    for t, s in zip(state.teacher.buffers(), state.student.buffers()):
        t.copy_(s)


@torch.no_grad()
def update_centre(state: DinoState, teacher_logits: torch.Tensor) -> None:
    """centre <- c_m * centre + (1 - c_m) * batch mean of teacher logits."""
    batch_mean = teacher_logits.reshape(-1, teacher_logits.shape[-1]).mean(dim=0)
    state.centre.mul_(state.centre_momentum).add_(batch_mean, alpha=1.0 - state.centre_momentum)
