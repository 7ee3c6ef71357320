"""Network description and parameter containers.

A network is a chain of N+1 blocks: an input conv block, standard
conv-bn-relu blocks, and an output block (global average pool + linear).
Blocks are the smallest unit that is frozen or trained.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ops import conv_output_hw


@dataclass(frozen=True)
class BlockSpec:
    """Shape-level description of one block.

    Conv-carrying blocks (kind 'input' or 'standard') hold kernel/channel/
    stride/padding geometry plus bn/relu flags; the 'output' block holds the
    linear head dimensions instead.
    """
    kind: str                      # input | standard | output
    kernel_size: int = 0
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    padding: int = 0
    has_bn: bool = True
    has_relu: bool = True
    in_features: int = 0           # output block only
    num_classes: int = 0

    @property
    def has_conv(self) -> bool:
        return self.kind in ("input", "standard")


@dataclass(frozen=True)
class ModelTopology:
    """Ordered block specs plus the input image geometry."""
    blocks: tuple[BlockSpec, ...]
    image_size: int
    in_channels: int = 1

    def __post_init__(self):
        if len(self.blocks) < 2:
            raise ValueError("topology needs at least an input and an output block")
        if self.blocks[0].kind != "input" or self.blocks[-1].kind != "output":
            raise ValueError("topology must start with an input block and end with an output block")
        chain = self.in_channels
        for i, spec in enumerate(self.blocks[:-1]):
            if not spec.has_conv:
                raise ValueError(f"block {i} must be a conv block, got kind={spec.kind!r}")
            if spec.in_channels != chain:
                raise ValueError(f"block {i} expects {spec.in_channels} input channels, "
                                 f"chain provides {chain}")
            chain = spec.out_channels
        if self.blocks[-1].in_features != chain:
            raise ValueError(f"output block expects {self.blocks[-1].in_features} features, "
                             f"chain provides {chain}")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def last_index(self) -> int:
        return len(self.blocks) - 1

    def spatial_sizes(self) -> list[tuple[int, int]]:
        """(H, W) of each block's input, plus the final feature-map size."""
        sizes = [(self.image_size, self.image_size)]
        for spec in self.blocks[:-1]:
            h, w = sizes[-1]
            sizes.append(conv_output_hw(h, w, spec.kernel_size, spec.stride, spec.padding))
        return sizes


def make_topology(conv_blocks: list[dict], image_size: int, in_channels: int,
                  num_classes: int) -> ModelTopology:
    """Build a topology from per-conv-block dicts: out_channels, and optional
    kernel_size/stride/padding/has_bn/has_relu. The first entry becomes the
    input block; the output block is appended automatically."""
    specs = []
    chain = in_channels
    for i, cfg in enumerate(conv_blocks):
        k = cfg.get("kernel_size", 3)
        specs.append(BlockSpec(
            kind="input" if i == 0 else "standard",
            kernel_size=k,
            in_channels=chain,
            out_channels=cfg["out_channels"],
            stride=cfg.get("stride", 1),
            padding=cfg.get("padding", k // 2),
            has_bn=cfg.get("has_bn", True),
            has_relu=cfg.get("has_relu", True),
        ))
        chain = cfg["out_channels"]
    specs.append(BlockSpec(kind="output", in_features=chain, num_classes=num_classes))
    return ModelTopology(blocks=tuple(specs), image_size=image_size, in_channels=in_channels)


@dataclass
class BlockParams:
    """Parameter tensors of one block; unused slots stay None."""
    conv_weight: np.ndarray | None = None
    conv_bias: np.ndarray | None = None
    bn_gamma: np.ndarray | None = None
    bn_beta: np.ndarray | None = None
    bn_running_mean: np.ndarray | None = None
    bn_running_var: np.ndarray | None = None
    fc_weight: np.ndarray | None = None
    fc_bias: np.ndarray | None = None

    TRAINABLE = ("conv_weight", "conv_bias", "bn_gamma", "bn_beta", "fc_weight", "fc_bias")
    BUFFERS = ("bn_running_mean", "bn_running_var")

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: arr for name in self.TRAINABLE + self.BUFFERS
                if (arr := getattr(self, name)) is not None}

    def copy(self) -> "BlockParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def nbytes(self) -> int:
        return sum(arr.nbytes for arr in self.arrays().values())


@dataclass
class ModelParams:
    """Ordered per-block parameters for a topology."""
    blocks: list[BlockParams] = field(default_factory=list)

    def copy(self) -> "ModelParams":
        return ModelParams(blocks=[b.copy() for b in self.blocks])

    def __len__(self) -> int:
        return len(self.blocks)


def init_block(spec: BlockSpec, rng: np.random.Generator, dtype=np.float32) -> BlockParams:
    """He-style initialization for conv blocks, uniform fan-in for the head."""
    p = BlockParams()
    if spec.has_conv:
        fan_in = spec.kernel_size ** 2 * spec.in_channels
        std = np.sqrt(2.0 / fan_in)
        p.conv_weight = (rng.standard_normal(
            (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)) * std
        ).astype(dtype)
        p.conv_bias = np.zeros(spec.out_channels, dtype=dtype)
        if spec.has_bn:
            p.bn_gamma = np.ones(spec.out_channels, dtype=dtype)
            p.bn_beta = np.zeros(spec.out_channels, dtype=dtype)
            p.bn_running_mean = np.zeros(spec.out_channels, dtype=dtype)
            p.bn_running_var = np.ones(spec.out_channels, dtype=dtype)
    else:
        bound = 1.0 / np.sqrt(spec.in_features)
        p.fc_weight = rng.uniform(-bound, bound,
                                  (spec.num_classes, spec.in_features)).astype(dtype)
        p.fc_bias = np.zeros(spec.num_classes, dtype=dtype)
    return p


def init_model(topology: ModelTopology, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(blocks=[init_block(spec, rng, dtype) for spec in topology.blocks])


def parameter_count(spec: BlockSpec) -> int:
    """Number of scalars shipped for a trained block (incl. BN buffers)."""
    if spec.has_conv:
        n = spec.kernel_size ** 2 * spec.in_channels * spec.out_channels + spec.out_channels
        if spec.has_bn:
            n += 4 * spec.out_channels          # gamma, beta, running mean/var
        return n
    return spec.in_features * spec.num_classes + spec.num_classes
