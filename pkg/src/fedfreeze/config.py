"""Training configurations: contiguous trained-block ranges and the four
block roles they induce.

Roles: A = first trained block, B = trained block after the first,
C = frozen with no trained block below it, D = frozen above a trained block.
C blocks need only a forward pass; D blocks additionally produce intermediate
gradients; A adds parameter gradients; B adds both.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class BlockType(Enum):
    A_FIRST_TRAINED = "A"
    B_SUBSEQUENT_TRAINED = "B"
    C_FROZEN_BEFORE = "C"
    D_FROZEN_AFTER = "D"

    @property
    def trained(self) -> bool:
        return self in (BlockType.A_FIRST_TRAINED, BlockType.B_SUBSEQUENT_TRAINED)


@dataclass(frozen=True, order=True)
class Configuration:
    """Contiguous inclusive range [low, high] of trained block indices.

    The empty configuration (nothing trained) is Configuration.none().
    """
    low: int = -1
    high: int = -1

    @staticmethod
    def none() -> "Configuration":
        return Configuration(-1, -1)

    @property
    def empty(self) -> bool:
        return self.low < 0

    def __post_init__(self):
        if self.low < 0:
            if (self.low, self.high) != (-1, -1):
                raise ValueError(f"empty configuration must be (-1, -1), got ({self.low}, {self.high})")
        elif self.high < self.low:
            raise ValueError(f"invalid range [{self.low}, {self.high}]")

    def indices(self) -> range:
        return range(0, 0) if self.empty else range(self.low, self.high + 1)

    def contains(self, block: int) -> bool:
        return not self.empty and self.low <= block <= self.high

    def is_subset(self, other: "Configuration") -> bool:
        """Trained-block-set inclusion."""
        if self.empty:
            return True
        return not other.empty and other.low <= self.low and self.high <= other.high

    def is_proper_subset(self, other: "Configuration") -> bool:
        return self.is_subset(other) and self != other

    def validate(self, n_blocks: int) -> None:
        if not self.empty and self.high >= n_blocks:
            raise ValueError(f"configuration [{self.low}, {self.high}] out of bounds "
                             f"for {n_blocks} blocks")


def classify_blocks(config: Configuration, n_blocks: int) -> list[BlockType]:
    """Assign each of the n_blocks its role under the given configuration."""
    config.validate(n_blocks)
    if config.empty:
        return [BlockType.C_FROZEN_BEFORE] * n_blocks
    types = []
    for i in range(n_blocks):
        if i < config.low:
            types.append(BlockType.C_FROZEN_BEFORE)
        elif i == config.low:
            types.append(BlockType.A_FIRST_TRAINED)
        elif i <= config.high:
            types.append(BlockType.B_SUBSEQUENT_TRAINED)
        else:
            types.append(BlockType.D_FROZEN_AFTER)
    return types


def enumerate_contiguous(n_blocks: int) -> list[Configuration]:
    """All non-empty contiguous ranges over n_blocks, ascending (low, high).

    Count is n_blocks * (n_blocks + 1) / 2.
    """
    if n_blocks < 1:
        raise ValueError(f"n_blocks must be >= 1, got {n_blocks}")
    return [Configuration(low, high)
            for low in range(n_blocks)
            for high in range(low, n_blocks)]
