"""HTTP service wrapping the simulator.

Stateless request/response endpoints: submit a scenario and get the run's
CSV outputs back, dump a device class's cost table, enumerate the
configuration search space, or generate a synthetic IDX dataset. The CLI is
a thin client of this app; it can also be served standalone with uvicorn.
"""

from __future__ import annotations

import base64

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from .config import enumerate_contiguous
from .costs import build_cost_table
from .data import encode_idx, generate_synthetic_dataset
from .scenario import Scenario
from .simulation import build_topology, device_profile, run_scenario


class RunRequest(BaseModel):
    scenario: Scenario
    seed: int | None = None


class RunResponse(BaseModel):
    rounds: int
    final_accuracy: float
    metrics_csv: str
    contributions_csv: str
    resolved_scenario: dict


class CostTableRequest(BaseModel):
    scenario: Scenario
    device_class: str


class CostTableEntry(BaseModel):
    l: int
    u: int
    time_seconds: float
    size_bytes: int


class CostTableResponse(BaseModel):
    device_class: str
    csv: str
    entries: list[CostTableEntry]


class ConfigurationsResponse(BaseModel):
    blocks: int
    count: int
    configurations: list[tuple[int, int]]


class SyntheticDataParams(BaseModel):
    model_config = ConfigDict(extra="forbid")
    classes: int = Field(gt=1)
    samples: int = Field(gt=0)
    image_size: int = Field(gt=0)
    channels: int = Field(default=1, ge=1, le=1)    # IDX export is single-channel
    class_separation: float = Field(ge=0)
    noise_sigma: float = Field(ge=0)
    seed: int = 0


class SyntheticDataResponse(BaseModel):
    count: int
    image_size: int
    images_idx_base64: str
    labels_idx_base64: str


app = FastAPI(title="fedfreeze simulator",
              description="Federated-learning simulation with partial block "
                          "freezing and int8 quantization of frozen blocks")


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/runs", response_model=RunResponse)
def submit_run(req: RunRequest) -> RunResponse:
    try:
        result = run_scenario(req.scenario, seed_override=req.seed)
    except (ValueError, RuntimeError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    return RunResponse(
        rounds=len(result.metrics),
        final_accuracy=result.final_accuracy,
        metrics_csv=result.metrics_csv,
        contributions_csv=result.contributions_csv,
        resolved_scenario=result.resolved_scenario,
    )


@app.post("/cost-tables", response_model=CostTableResponse)
def cost_table(req: CostTableRequest) -> CostTableResponse:
    classes = {c.name: c for c in req.scenario.device_classes}
    if req.device_class not in classes:
        raise HTTPException(status_code=404,
                            detail=f"unknown device class {req.device_class!r}; "
                                   f"scenario defines {sorted(classes)}")
    topology = build_topology(req.scenario)
    table = build_cost_table(device_profile(classes[req.device_class]), topology,
                             req.scenario.batch_size, req.scenario.batches_per_round,
                             req.scenario.quantize)
    return CostTableResponse(
        device_class=req.device_class,
        csv=table.to_csv(),
        entries=[CostTableEntry(l=e.config.low, u=e.config.high,
                                time_seconds=e.time_seconds, size_bytes=e.size_bytes)
                 for e in table],
    )


@app.get("/configurations", response_model=ConfigurationsResponse)
def configurations(blocks: int) -> ConfigurationsResponse:
    try:
        configs = enumerate_contiguous(blocks)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return ConfigurationsResponse(blocks=blocks, count=len(configs),
                                  configurations=[(c.low, c.high) for c in configs])


@app.post("/datasets/synthetic", response_model=SyntheticDataResponse)
def synthetic_dataset(params: SyntheticDataParams) -> SyntheticDataResponse:
    rng = np.random.default_rng(params.seed)
    x, y, _ = generate_synthetic_dataset(params.classes, params.samples,
                                         params.image_size, params.channels,
                                         params.class_separation, params.noise_sigma, rng)
    images, labels = encode_idx(x, y)
    return SyntheticDataResponse(
        count=params.samples,
        image_size=params.image_size,
        images_idx_base64=base64.b64encode(images).decode("ascii"),
        labels_idx_base64=base64.b64encode(labels).decode("ascii"),
    )
