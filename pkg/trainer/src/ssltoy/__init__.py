"""Toy-scale self-distillation training with an embedding export bridge."""

__version__ = "0.1.0"
