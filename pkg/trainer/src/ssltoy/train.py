"""Training loop: multi-crop -> student/teacher forward -> loss -> step -> EMA.

Two objectives share the loop scaffolding: self-distillation against a
momentum teacher (with centring and sharpening), and a contrastive
two-view baseline. The teacher-target entropy is logged every step; its
collapse or survival is the headline diagnostic of a run.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import multi_crop_views
from .losses import dino_loss, mean_target_entropy, ntxent_loss
from .model import DinoState, DistillNet, make_state, update_centre, update_teacher


@dataclass
class TrainConfig:
    objective: str = "dino"  # "dino" | "simclr"
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.04
    warmup_steps: int = 100
    n_global: int = 2
    n_local: int = 8
    global_size: int = 64
    local_size: int = 32
    input_size: int = 32
    hidden: int = 256
    embed_dim: int = 64
    prototypes: int = 32
    tau_s: float = 0.1
    tau_t_start: float = 0.04
    tau_t_end: float = 0.07
    tau_t_warmup: int = 500
    momentum_start: float = 0.992
    momentum_end: float = 1.0
    centre_momentum: float = 0.9
    use_centring: bool = True
    simclr_temperature: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.objective not in ("dino", "simclr"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if not 0 < self.tau_t_start <= self.tau_t_end < self.tau_s:
            raise ValueError("need 0 < tau_t_start <= tau_t_end < tau_s")


@dataclass
class TrainResult:
    net: DistillNet
    state: DinoState | None
    entropy_history: list[float] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)


def teacher_temperature(config: TrainConfig, step: int) -> float:
    if step >= config.tau_t_warmup:
        return config.tau_t_end
    frac = step / max(1, config.tau_t_warmup)
    return config.tau_t_start + frac * (config.tau_t_end - config.tau_t_start)


def teacher_momentum(config: TrainConfig, step: int) -> float:
    """Cosine ramp from momentum_start to momentum_end over the run."""
    frac = step / max(1, config.steps - 1) if config.steps > 1 else 1.0
    cos = (1 + math.cos(math.pi * frac)) / 2
    return config.momentum_end - (config.momentum_end - config.momentum_start) * cos


def learning_rate(config: TrainConfig, step: int) -> float:
    if step < config.warmup_steps:
        return config.lr * (step + 1) / config.warmup_steps
    frac = (step - config.warmup_steps) / max(1, config.steps - config.warmup_steps)
    return config.lr * (1 + math.cos(math.pi * frac)) / 2


def train_toy(images: torch.Tensor, config: TrainConfig) -> TrainResult:
    """Run the full loop on an in-memory image tensor; labels never enter."""
    config.validate()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    aug_gen = torch.Generator().manual_seed(config.seed + 1)

    net_kwargs = dict(
        input_size=config.input_size,
        hidden=config.hidden,
        embed_dim=config.embed_dim,
        prototypes=config.prototypes,
    )
    if config.objective == "dino":
        state = make_state(
            tau_s=config.tau_s,
            tau_t=config.tau_t_start,
            momentum=config.momentum_start,
            centre_momentum=config.centre_momentum,
            **net_kwargs,
        )
        net = state.student
    else:
        state = None
        net = DistillNet(**net_kwargs)

    optimizer = torch.optim.AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    result = TrainResult(net=net, state=state)

    for step in range(config.steps):
        for group in optimizer.param_groups:
            group["lr"] = learning_rate(config, step)
        idx = rng.choice(len(images), size=min(config.batch_size, len(images)), replace=False)
        batch = images[np.sort(idx)]

        if config.objective == "dino":
            loss = _dino_step(state, batch, config, step, aug_gen, result)
        else:
            loss = _simclr_step(net, batch, config, aug_gen)

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        if state is not None:
            assert all(p.grad is None for p in state.teacher.parameters()), (
                "teacher must receive zero gradient"
            )
            state.momentum = teacher_momentum(config, step)
            update_teacher(state)
        result.loss_history.append(float(loss.detach()))
    return result


def _dino_step(state, batch, config, step, aug_gen, result) -> torch.Tensor:
    state.tau_t = teacher_temperature(config, step)
    globals_, locals_ = multi_crop_views(
        batch,
        n_global=config.n_global,
        n_local=config.n_local,
        global_size=config.global_size,
        local_size=config.local_size,
        gen=aug_gen,
    )
    with torch.no_grad():
        teacher_logits = [state.teacher(v) for v in globals_]
    student_logits = [state.student(v) for v in globals_ + locals_]
    centre = state.centre if config.use_centring else torch.zeros_like(state.centre)
    loss = dino_loss(student_logits, teacher_logits, centre, state.tau_s, state.tau_t)

    stacked = torch.cat(teacher_logits, dim=0)
    result.entropy_history.append(
        mean_target_entropy(stacked, centre if config.use_centring else None, state.tau_t)
    )
    if config.use_centring:
        update_centre(state, stacked)
    return loss


def _simclr_step(net, batch, config, aug_gen) -> torch.Tensor:
    globals_, _ = multi_crop_views(
        batch,
        n_global=2,
        n_local=0,
        global_size=config.global_size,
        local_size=config.local_size,
        gen=aug_gen,
    )
    z1 = net(globals_[0])
    z2 = net(globals_[1])
    return ntxent_loss(z1, z2, config.simclr_temperature)


def save_checkpoint(result: TrainResult, config: TrainConfig, path: str | Path) -> None:
    """Atomic write: serialize to a temp file, then rename into place."""
    path = Path(path)
    payload = {
        "config": asdict(config),
        "net": result.net.state_dict(),
        "teacher": result.state.teacher.state_dict() if result.state else None,
        "centre": result.state.centre if result.state else None,
        "entropy_history": result.entropy_history,
        "loss_history": result.loss_history,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> tuple[TrainConfig, DistillNet, DistillNet | None, dict]:
    """Returns (config, student_net, teacher_net_or_None, raw payload)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = TrainConfig(**payload["config"])
    net_kwargs = dict(
        input_size=config.input_size,
        hidden=config.hidden,
        embed_dim=config.embed_dim,
        prototypes=config.prototypes,
    )
    net = DistillNet(**net_kwargs)
    net.load_state_dict(payload["net"])
    teacher = None
    if payload.get("teacher") is not None:
        teacher = DistillNet(**net_kwargs)
        teacher.load_state_dict(payload["teacher"])
    return config, net, teacher, payload
