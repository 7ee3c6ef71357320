"""Command-line client for the simulator service.

Every subcommand goes through the HTTP API: against a remote server when
--server is given, otherwise against an in-process instance of the app.
Scenario files are validated locally first so errors point at the offending
line of the file.
"""

from __future__ import annotations

import base64
import json
import os
import sys

import click
import httpx

from .scenario import Scenario, ScenarioError, parse_scenario_text


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app
    return TestClient(app)


def _load_scenario_checked(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_scenario_text(f.read(), name=path)
    except OSError as e:
        raise click.ClickException(f"cannot read scenario: {e}")
    except ScenarioError as e:
        raise click.ClickException(str(e))


def _post(client: httpx.Client, url: str, payload: dict) -> dict:
    resp = client.post(url, json=payload)
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text) if resp.headers.get(
            "content-type", "").startswith("application/json") else resp.text
        raise click.ClickException(f"{url} failed ({resp.status_code}): {detail}")
    return resp.json()


@click.group()
def main():
    """Federated-learning simulator with partial freezing and quantization."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(),
              help="Scenario JSON file.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for metrics.csv, contributions.csv, and the scenario echo.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--server", default=None, help="Base URL of a running service.")
def run(scenario_path, out_dir, seed, server):
    """Run a scenario and write the per-round outputs."""
    sc = _load_scenario_checked(scenario_path)
    with _client(server) as client:
        body = _post(client, "/runs",
                     {"scenario": sc.model_dump(mode="json"), "seed": seed})
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as f:
            f.write(body["metrics_csv"])
        with open(os.path.join(out_dir, "contributions.csv"), "w", encoding="utf-8") as f:
            f.write(body["contributions_csv"])
        with open(os.path.join(out_dir, "scenario_resolved.json"), "w", encoding="utf-8") as f:
            json.dump(body["resolved_scenario"], f, indent=2)
            f.write("\n")
    except OSError as e:
        raise click.ClickException(f"cannot write outputs: {e}")
    click.echo(f"{body['rounds']} rounds, final accuracy {body['final_accuracy']:.4f}; "
               f"outputs in {out_dir}")


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--device", required=True, help="Device class name from the scenario.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Destination CSV (l,u,time_seconds,size_bytes).")
@click.option("--server", default=None)
def profile(scenario_path, device, out_path, server):
    """Dump a device class's per-configuration cost table."""
    sc = _load_scenario_checked(scenario_path)
    with _client(server) as client:
        body = _post(client, "/cost-tables",
                     {"scenario": sc.model_dump(mode="json"), "device_class": device})
    try:
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(body["csv"])
    except OSError as e:
        raise click.ClickException(f"cannot write cost table: {e}")
    click.echo(f"{len(body['entries'])} configurations -> {out_path}")


@main.command("enumerate-configs")
@click.option("--blocks", required=True, type=int, help="Number of blocks.")
@click.option("--server", default=None)
def enumerate_configs(blocks, server):
    """Print the contiguous configuration search space as CSV."""
    with _client(server) as client:
        resp = client.get("/configurations", params={"blocks": blocks})
    if resp.status_code != 200:
        raise click.ClickException(f"enumeration failed: {resp.json().get('detail', resp.text)}")
    body = resp.json()
    click.echo("l,u")
    for low, high in body["configurations"]:
        click.echo(f"{low},{high}")


@main.command("gen-data")
@click.option("--params", "params_path", required=True, type=click.Path(),
              help="JSON file with classes, samples, image_size, class_separation, "
                   "noise_sigma, and optional channels/seed.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--server", default=None)
def gen_data(params_path, out_dir, server):
    """Generate a synthetic dataset and write it as an IDX pair."""
    try:
        with open(params_path, "r", encoding="utf-8") as f:
            params = json.load(f)
    except OSError as e:
        raise click.ClickException(f"cannot read params: {e}")
    except json.JSONDecodeError as e:
        raise click.ClickException(f"{params_path}:{e.lineno}: invalid JSON: {e.msg}")
    with _client(server) as client:
        body = _post(client, "/datasets/synthetic", params)
    try:
        os.makedirs(out_dir, exist_ok=True)
        images = os.path.join(out_dir, "images.idx3-ubyte")
        labels = os.path.join(out_dir, "labels.idx1-ubyte")
        with open(images, "wb") as f:
            f.write(base64.b64decode(body["images_idx_base64"]))
        with open(labels, "wb") as f:
            f.write(base64.b64decode(body["labels_idx_base64"]))
    except OSError as e:
        raise click.ClickException(f"cannot write dataset: {e}")
    click.echo(f"{body['count']} samples -> {images}, {labels}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the simulator service."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
