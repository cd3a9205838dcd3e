"""Acceptance suite for the trainer: EMA exactness, gradient checks, collapse
reproduction, and the end-to-end bridge into the re-ID pipeline.

The collapse and end-to-end tests run real training loops on CPU; the whole
module takes several minutes. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from ssltoy.data import load_dataset, make_toy_dataset
from ssltoy.losses import dino_loss, ntxent_loss
from ssltoy.model import make_state, update_teacher
from ssltoy.train import TrainConfig, train_toy


def _ok(name):
    print(f"\nACCEPTANCE {name}: PASS")


def central_difference_check(f, x, analytic, samples=8):
    eps = 1e-6
    idxs = np.linspace(0, x.numel() - 1, samples).astype(int)
    for idx in idxs:
        plus, minus = x.clone(), x.clone()
        plus[idx] += eps
        minus[idx] -= eps
        numeric = float((f(plus) - f(minus)) / (2 * eps))
        assert abs(numeric - float(analytic[idx])) < 1e-7 + 1e-4 * abs(float(analytic[idx]))


class TestAcceptance:
    def test_ema_exactness_closed_form(self):
        """After n constant-student updates, teacher = m^n t0 + (1 - m^n) s to 1e-6."""
        state = make_state(input_size=8, hidden=16, embed_dim=8, prototypes=4)
        state.student.double()
        state.teacher.double()
        state.momentum = 0.97
        t0 = [p.clone() for p in state.teacher.parameters()]
        with torch.no_grad():
            for p in state.student.parameters():
                p.mul_(0).add_(0.125)
        n = 40
        for _ in range(n):
            update_teacher(state)
        factor = 0.97**n
        for initial, t in zip(t0, state.teacher.parameters()):
            want = factor * initial + (1 - factor) * 0.125
            assert torch.allclose(t, want, atol=1e-6)
        _ok("EMA exactness vs closed form (40 updates, 1e-6)")

    def test_distillation_loss_gradients(self):
        """>= 20 random instances, central differences, 1e-4 relative."""
        for seed in range(20):
            torch.manual_seed(seed)
            teacher = [torch.randn(4, 3).double() for _ in range(2)]
            centre = 0.1 * torch.randn(3).double()

            def f(flat):
                views = list(flat.reshape(3, 4, 3))
                return dino_loss(views, teacher, centre, 0.1, 0.06)

            x = torch.randn(3 * 4 * 3).double()
            xg = x.clone().requires_grad_(True)
            analytic = torch.autograd.grad(f(xg), xg)[0]
            central_difference_check(f, x, analytic)
        _ok("self-distillation loss gradient vs finite differences (20 instances)")

    def test_contrastive_loss_gradients(self):
        for seed in range(20):
            torch.manual_seed(seed)

            def f(flat):
                z = flat.reshape(2, 5, 6)
                return ntxent_loss(z[0], z[1], 0.4)

            x = torch.randn(2 * 5 * 6).double()
            xg = x.clone().requires_grad_(True)
            analytic = torch.autograd.grad(f(xg), xg)[0]
            central_difference_check(f, x, analytic)
        _ok("contrastive loss gradient vs finite differences (20 instances)")

    def test_collapse_reproduction(self, tmp_path):
        """Centring keeps late-run mean target entropy above 0.5 log K within a
        2000-step run; disabling centring drives it below. Under 10 minutes."""
        make_toy_dataset(tmp_path / "data", identities=3, tracks_per_identity=6,
                         frames_per_track=10, image_size=64, seed=0)
        images, _ = load_dataset(tmp_path / "data")
        common = dict(steps=2000, global_size=32, local_size=16, seed=0)
        bound = 0.5 * math.log(32)

        start = time.monotonic()
        with_centring = train_toy(images, TrainConfig(use_centring=True, **common))
        without = train_toy(images, TrainConfig(use_centring=False, **common))
        elapsed = time.monotonic() - start

        def late_mean(history):
            tail = history[-max(1, len(history) // 5):]
            return sum(tail) / len(tail)

        kept = late_mean(with_centring.entropy_history)
        dropped = late_mean(without.entropy_history)
        assert kept >= bound, f"centring run entropy {kept:.3f} fell below {bound:.3f}"
        assert dropped < bound, f"no-centring run entropy {dropped:.3f} stayed above {bound:.3f}"
        assert elapsed < 600.0
        _ok(
            f"collapse reproduction (entropy {kept:.2f} with centring vs "
            f"{dropped:.2f} without; bound {bound:.2f}; {elapsed:.0f}s)"
        )

    def test_end_to_end_beats_chance_and_random_baseline(self, tmp_path):
        """Toy-distilled embeddings, evaluated by the re-ID pipeline CLI, beat
        chance by > 5 sigma and beat an untrained network on the same split."""
        data = tmp_path / "data"
        run = lambda argv: subprocess.run(
            [sys.executable, "-m", *argv], check=True, capture_output=True, text=True
        )
        run(["ssltoy", "make-data", "--identities", "3", "--tracks", "6",
             "--frames", "10", "--seed", "0", "--out", str(data)])
        run(["ssltoy", "train", "--data", str(data), "--objective", "dino",
             "--steps", "1200", "--global-size", "32", "--local-size", "16",
             "--seed", "0", "--out", str(tmp_path / "dino.pt")])
        run(["ssltoy", "export", "--checkpoint", str(tmp_path / "dino.pt"),
             "--data", str(data), "--out", str(tmp_path / "trained.cfe")])
        run(["ssltoy", "export", "--untrained", "--seed", "0", "--data", str(data),
             "--out", str(tmp_path / "untrained.cfe")])

        for store in ("trained", "untrained"):
            run(["facereid", "eval-reid", "--store", str(tmp_path / f"{store}.cfe"),
                 "--gallery-tracks", "4", "--query-tracks", "2",
                 "--frames-per-track", "10", "--k-values", "1",
                 "--repetitions", "3", "--seed", "0",
                 "--out", str(tmp_path / f"{store}.json")])

        trained = json.loads((tmp_path / "trained.json").read_text())["accuracy_mean"]
        untrained = json.loads((tmp_path / "untrained.json").read_text())["accuracy_mean"]
        chance = 1 / 3
        sigma = math.sqrt(chance * (1 - chance) / 60)  # 60 queries per repetition
        assert trained > chance + 5 * sigma, f"{trained:.3f} <= {chance + 5 * sigma:.3f}"
        assert trained > untrained, f"trained {trained:.3f} <= untrained {untrained:.3f}"
        _ok(
            f"end-to-end re-ID (trained {trained:.3f} > chance+5sigma "
            f"{chance + 5 * sigma:.3f} and > untrained {untrained:.3f})"
        )
