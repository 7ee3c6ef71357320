"""Federated-learning simulator with partial block freezing, conv-BN fusion,
and int8 quantization of frozen blocks under per-device resource constraints."""

__version__ = "0.1.0"

from .config import BlockType, Configuration, classify_blocks, enumerate_contiguous
from .costs import CostTable, DeviceProfile, build_cost_table, estimate_time, update_size
from .freezing import CalibrationStats, PartitionedModel, apply_configuration, calibrate_round
from .model import BlockParams, BlockSpec, ModelParams, ModelTopology, init_model, make_topology
from .scenario import Scenario, default_scenario, load_scenario
from .simulation import run_scenario, run_scenario_file

__all__ = [
    "BlockParams", "BlockSpec", "BlockType", "CalibrationStats", "Configuration",
    "CostTable", "DeviceProfile", "ModelParams", "ModelTopology", "PartitionedModel",
    "Scenario", "apply_configuration", "build_cost_table", "calibrate_round",
    "classify_blocks", "default_scenario", "enumerate_contiguous", "estimate_time",
    "init_model", "load_scenario", "make_topology", "run_scenario",
    "run_scenario_file", "update_size",
]
