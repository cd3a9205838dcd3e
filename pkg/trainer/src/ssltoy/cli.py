"""Trainer entry point: make the toy dataset, train, export embeddings."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from .data import load_dataset, make_toy_dataset
from .export import export_embeddings
from .model import DistillNet
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_toy


def cmd_make_data(args) -> int:
    metas = make_toy_dataset(
        args.out,
        identities=args.identities,
        tracks_per_identity=args.tracks,
        frames_per_track=args.frames,
        image_size=args.image_size,
        seed=args.seed,
    )
    print(f"wrote {len(metas)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    images, _ = load_dataset(args.data)
    config = TrainConfig(
        objective=args.objective,
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        n_local=args.n_local,
        global_size=args.global_size,
        local_size=args.local_size,
        prototypes=args.prototypes,
        use_centring=not args.no_centring,
        seed=args.seed,
    )
    result = train_toy(images, config)
    save_checkpoint(result, config, args.out)
    if result.entropy_history:
        tail = result.entropy_history[-max(1, len(result.entropy_history) // 5):]
        print(
            f"trained {config.objective} for {config.steps} steps; "
            f"final loss {result.loss_history[-1]:.4f}, "
            f"late-run target entropy {sum(tail) / len(tail):.3f}"
        )
    else:
        print(f"trained {config.objective} for {config.steps} steps; "
              f"final loss {result.loss_history[-1]:.4f}")
    return 0


def cmd_export(args) -> int:
    if not args.untrained and args.checkpoint is None:
        print("error: --checkpoint is required unless --untrained is set", file=sys.stderr)
        return 2
    images, metas = load_dataset(args.data)
    if args.untrained:
        torch.manual_seed(args.seed)
        net = DistillNet()
    else:
        _, student, teacher, _ = load_checkpoint(args.checkpoint)
        # the momentum teacher is the smoother network; prefer it when present
        net = teacher if (teacher is not None and not args.student) else student
    count = export_embeddings(net, images, metas, args.out, source=args.source)
    print(f"exported {count} embeddings to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssltoy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate the synthetic toy dataset")
    p.add_argument("--identities", type=int, default=3)
    p.add_argument("--tracks", type=int, default=6)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="run the self-distillation or contrastive loop")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--objective", choices=["dino", "simclr"], default="dino")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--n-local", type=int, default=8)
    p.add_argument("--global-size", type=int, default=64)
    p.add_argument("--local-size", type=int, default=32)
    p.add_argument("--prototypes", type=int, default=32)
    p.add_argument("--no-centring", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="embed a dataset into a re-ID store file pair")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--untrained", action="store_true",
                   help="skip the checkpoint; export a freshly initialised network")
    p.add_argument("--student", action="store_true",
                   help="export the student network instead of the teacher")
    p.add_argument("--source", default="ssltoy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
