"""Synthetic toy face dataset and multi-crop augmentation.

Each identity is a smooth random texture; tracks shift and tint it, frames
add jitter and noise. The nuisances are strong enough that raw-pixel
nearest-neighbour matching is unreliable, which is exactly what the
invariance objective is supposed to fix. Labels live in a csv sidecar and
are used only for export metadata and downstream evaluation, never by the
training loop.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    identity: str
    track_id: str


def _smooth_pattern(rng: np.random.Generator, size: int, cells: int = 10) -> np.ndarray:
    # Enough cells that even a small crop of the pattern stays identifying.
    grid = rng.uniform(0.0, 1.0, size=(3, cells, cells)).astype(np.float32)
    t = torch.from_numpy(grid).unsqueeze(0)
    up = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return up.squeeze(0).numpy()


def make_toy_dataset(
    out_dir: str | Path,
    identities: int = 3,
    tracks_per_identity: int = 6,
    frames_per_track: int = 10,
    image_size: int = 64,
    seed: int = 0,
) -> list[ImageMeta]:
    """Write PNGs plus a labels.csv sidecar; returns the metadata in file order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    metas = []
    for i in range(identities):
        identity = f"id{i}"
        pattern = _smooth_pattern(rng, image_size)
        for t in range(tracks_per_identity):
            track = f"t{t:02d}"
            # moderate per-track shift: crops from sibling tracks still overlap
            max_shift = max(1, image_size // 6)
            shift = (
                int(rng.integers(-max_shift, max_shift + 1)),
                int(rng.integers(-max_shift, max_shift + 1)),
            )
            tint = rng.uniform(0.85, 1.15, size=(3, 1, 1)).astype(np.float32)
            base = np.roll(pattern, shift, axis=(1, 2)) * tint
            for f in range(frames_per_track):
                brightness = rng.uniform(-0.25, 0.25)
                contrast = rng.uniform(0.6, 1.4)
                frame = (base - 0.5) * contrast + 0.5 + brightness
                frame = frame + rng.normal(0, 0.08, size=frame.shape)
                frame = np.clip(frame, 0.0, 1.0)
                image_id = f"{identity}_{track}_f{f:03d}"
                arr = (frame.transpose(1, 2, 0) * 255).round().astype(np.uint8)
                Image.fromarray(arr).save(out_dir / f"{image_id}.png")
                metas.append(ImageMeta(image_id=image_id, identity=identity, track_id=track))
    with open(out_dir / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "identity", "track_id"])
        for m in metas:
            writer.writerow([m.image_id, m.identity, m.track_id])
    return metas


def load_dataset(data_dir: str | Path) -> tuple[torch.Tensor, list[ImageMeta]]:
    """Read the PNG directory and its labels sidecar back into memory."""
    data_dir = Path(data_dir)
    metas = []
    with open(data_dir / "labels.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            metas.append(
                ImageMeta(
                    image_id=row["image_id"],
                    identity=row["identity"],
                    track_id=row["track_id"],
                )
            )
    images = []
    for m in metas:
        arr = np.asarray(Image.open(data_dir / f"{m.image_id}.png"), dtype=np.float32) / 255.0
        images.append(torch.from_numpy(arr.transpose(2, 0, 1)))
    return torch.stack(images), metas


def _rand(gen: torch.Generator, *shape) -> torch.Tensor:
    return torch.rand(*shape, generator=gen)


def random_crop_resize(
    image: torch.Tensor,
    scale_range: tuple[float, float],
    out_size: int,
    gen: torch.Generator,
) -> torch.Tensor:
    """Area-scaled random crop resized to a square view."""
    _, height, width = image.shape
    scale = scale_range[0] + float(_rand(gen, 1)) * (scale_range[1] - scale_range[0])
    side = max(2, int(round(np.sqrt(scale) * min(height, width))))
    top = int(float(_rand(gen, 1)) * (height - side + 1))
    left = int(float(_rand(gen, 1)) * (width - side + 1))
    crop = image[:, top : top + side, left : left + side].unsqueeze(0)
    out = F.interpolate(crop, size=(out_size, out_size), mode="bilinear", align_corners=False)
    return out.squeeze(0)


def augment_view(
    image: torch.Tensor,
    scale_range: tuple[float, float],
    out_size: int,
    gen: torch.Generator,
) -> torch.Tensor:
    view = random_crop_resize(image, scale_range, out_size, gen)
    if float(_rand(gen, 1)) < 0.5:
        view = torch.flip(view, dims=[-1])
    contrast = 0.6 + float(_rand(gen, 1)) * 0.8
    brightness = (float(_rand(gen, 1)) - 0.5) * 0.5
    view = (view - 0.5) * contrast + 0.5 + brightness
    view = view + torch.randn(view.shape, generator=gen) * 0.05
    return view.clamp(0.0, 1.0)


def multi_crop_views(
    batch: torch.Tensor,
    n_global: int = 2,
    n_local: int = 8,
    global_size: int = 64,
    local_size: int = 32,
    global_scale: tuple[float, float] = (0.5, 1.0),
    local_scale: tuple[float, float] = (0.2, 0.5),
    gen: torch.Generator | None = None,
) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
    """Per-image global and local views; every view traces to its source image.

    Returns (globals, locals): lists of (batch, 3, size, size) tensors, one
    entry per view.
    """
    if n_global < 1 or n_local < 0:
        raise ValueError("need at least one global view and non-negative locals")
    gen = gen or torch.Generator().manual_seed(0)
    globals_ = [
        torch.stack([augment_view(img, global_scale, global_size, gen) for img in batch])
        for _ in range(n_global)
    ]
    locals_ = [
        torch.stack([augment_view(img, local_scale, local_size, gen) for img in batch])
        for _ in range(n_local)
    ]
    return globals_, locals_
