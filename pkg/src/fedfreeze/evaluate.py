"""Test-set evaluation of a model."""

from __future__ import annotations

import numpy as np

from .engine import model_forward, plan_evaluation
from .model import ModelParams, ModelTopology


def evaluate_accuracy(model: ModelParams, topology: ModelTopology,
                      x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> float:
    """Top-1 accuracy with fixed-stats BN using each block's running
    statistics. Ties break toward the lowest class index (argmax picks the
    first maximum)."""
    if x.shape[0] == 0:
        raise ValueError("test set must be non-empty")
    plan = plan_evaluation(model, topology)
    correct = 0
    for start in range(0, x.shape[0], batch_size):
        logits, _ = model_forward(plan, x[start:start + batch_size], training=False)
        correct += int((logits.argmax(axis=1) == y[start:start + batch_size]).sum())
    return correct / x.shape[0]
