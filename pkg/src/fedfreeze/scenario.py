"""Scenario files: the JSON schema driving a simulation run.

Field names mirror the runtime types one-to-one and unknown keys are
rejected, so typos fail loudly. Validation errors carry the line of the
offending key in the source file where it can be located.
"""

from __future__ import annotations

import json
import re
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConvBlockConfig(StrictModel):
    out_channels: int = Field(gt=0)
    kernel_size: int = Field(default=3, gt=0)
    stride: int = Field(default=1, ge=1)
    padding: Optional[int] = Field(default=None, ge=0)   # None -> kernel_size // 2
    has_bn: bool = True
    has_relu: bool = True


class TopologyConfig(StrictModel):
    image_size: int = Field(gt=0)
    in_channels: int = Field(default=1, gt=0)
    num_classes: int = Field(gt=1)
    conv_blocks: list[ConvBlockConfig] = Field(min_length=1)


class SyntheticDataConfig(StrictModel):
    kind: Literal["synthetic"] = "synthetic"
    classes: int = Field(gt=1)
    train_samples: int = Field(gt=0)
    test_samples: int = Field(gt=0)
    image_size: int = Field(gt=0)
    channels: int = Field(default=1, gt=0)
    class_separation: float = Field(ge=0)
    noise_sigma: float = Field(ge=0)


class IdxDataConfig(StrictModel):
    kind: Literal["idx_files"]
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


class DeviceClassConfig(StrictModel):
    name: str
    fraction: float = Field(gt=0, le=1)
    float_mac_rate: float = Field(gt=0)
    quant_cost_factor: float = Field(default=1.0, gt=0, le=1)
    overhead_per_batch: float = Field(default=0.0, ge=0)
    upload_budget_bytes: Optional[float] = Field(default=None, ge=0)     # None = unconstrained
    upload_budget_range: Optional[tuple[float, float]] = None            # uniform per device-round

    @model_validator(mode="after")
    def _check_budget(self):
        if self.upload_budget_range is not None:
            lo, hi = self.upload_budget_range
            if lo < 0 or hi < lo:
                raise ValueError("upload_budget_range must satisfy 0 <= lo <= hi")
            if self.upload_budget_bytes is not None:
                raise ValueError("give either upload_budget_bytes or upload_budget_range, not both")
        return self


class Scenario(StrictModel):
    topology: TopologyConfig
    dataset: Union[SyntheticDataConfig, IdxDataConfig] = Field(discriminator="kind")
    num_devices: int = Field(gt=0)
    devices_per_round: int = Field(gt=0)
    shard_size: int = Field(gt=0)
    device_classes: list[DeviceClassConfig] = Field(min_length=1)
    round_deadline_seconds: Optional[float] = Field(default=None, gt=0)  # None -> fastest full-range time
    rounds: int = Field(gt=0)
    learning_rate: float = Field(gt=0)
    batch_size: int = Field(gt=0)
    batches_per_round: int = Field(gt=0)
    calibration_batch_size: int = Field(gt=0)
    quantize: bool = True
    straggler_noise_sigma: float = Field(default=0.0, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_consistency(self):
        total = sum(c.fraction for c in self.device_classes)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"device class fractions must sum to 1, got {total}")
        if self.devices_per_round > self.num_devices:
            raise ValueError("devices_per_round exceeds num_devices")
        if isinstance(self.dataset, SyntheticDataConfig):
            d = self.dataset
            if d.image_size != self.topology.image_size:
                raise ValueError("dataset image_size must match topology image_size")
            if d.channels != self.topology.in_channels:
                raise ValueError("dataset channels must match topology in_channels")
            if d.classes != self.topology.num_classes:
                raise ValueError("dataset classes must match topology num_classes")
            if self.num_devices * self.shard_size > d.train_samples:
                raise ValueError("train_samples too small for num_devices * shard_size")
        return self


class ScenarioError(ValueError):
    """Scenario file rejected; message carries file:line context."""


def _key_line(text: str, key: str) -> int:
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def parse_scenario_text(text: str, name: str = "<scenario>") -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{name}:{e.lineno}: invalid JSON: {e.msg}") from e
    try:
        return Scenario.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        keys = [str(p) for p in first["loc"] if isinstance(p, str)]
        line = _key_line(text, keys[-1]) if keys else 1
        where = ".".join(str(p) for p in first["loc"]) or "scenario"
        raise ScenarioError(f"{name}:{line}: {where}: {first['msg']}") from e


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        return parse_scenario_text(f.read(), name=path)


def default_scenario() -> Scenario:
    """Desk-scale preset: 6-block network on 16x16 single-channel synthetic
    images, 100 devices with 10 participating per round."""
    return Scenario(
        topology=TopologyConfig(
            image_size=16,
            in_channels=1,
            num_classes=10,
            conv_blocks=[
                ConvBlockConfig(out_channels=8),              # input block
                # the one downsampling block; 2x2/stride-2 keeps the conv
                # geometry integral on a 16x16 grid
                ConvBlockConfig(out_channels=16, kernel_size=2, stride=2, padding=0),
                ConvBlockConfig(out_channels=16),
                ConvBlockConfig(out_channels=32),
                ConvBlockConfig(out_channels=32),
            ],
        ),
        dataset=SyntheticDataConfig(
            classes=10, train_samples=20000, test_samples=2000,
            image_size=16, channels=1, class_separation=1.0, noise_sigma=1.0,
        ),
        num_devices=100,
        devices_per_round=10,
        shard_size=200,
        device_classes=[
            DeviceClassConfig(name="standard", fraction=1.0, float_mac_rate=4e8,
                              quant_cost_factor=0.49),
        ],
        round_deadline_seconds=None,
        rounds=60,
        learning_rate=0.005,
        batch_size=32,
        batches_per_round=6,
        calibration_batch_size=32,
        seed=0,
    )
