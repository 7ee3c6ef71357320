"""Shared builders for small random networks used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fedfreeze.model import ModelTopology, init_model, make_topology


def tiny_topology(n_standard: int = 2, width: int = 3, image_size: int = 8,
                  num_classes: int = 4, kernel: int = 3) -> ModelTopology:
    """Input block + n_standard conv blocks + output head, all width channels."""
    blocks = [{"out_channels": width, "kernel_size": kernel, "stride": 1,
               "padding": kernel // 2}]
    blocks += [{"out_channels": width, "kernel_size": kernel, "stride": 1,
                "padding": kernel // 2} for _ in range(n_standard)]
    return make_topology(blocks, image_size=image_size, in_channels=1,
                         num_classes=num_classes)


def random_model(topology: ModelTopology, seed: int = 0, dtype=np.float32):
    return init_model(topology, seed=seed, dtype=dtype)


def random_batch(topology: ModelTopology, batch: int, rng: np.random.Generator,
                 dtype=np.float32):
    x = rng.standard_normal(
        (batch, topology.in_channels, topology.image_size, topology.image_size)).astype(dtype)
    num_classes = topology.blocks[-1].num_classes
    y = rng.integers(0, num_classes, size=batch)
    return x, y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
