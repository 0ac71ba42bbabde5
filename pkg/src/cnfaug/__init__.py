"""Confounding measures and causal data augmentation on synthetic digit images."""

__version__ = "0.1.0"
