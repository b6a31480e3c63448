"""Thin command-line client for the voxshap service.

Every subcommand builds a request and sends it over HTTP: against a
remote service when --server is given, otherwise against the in-process
app (same code path, no deployment needed). Exit codes: 0 success,
2 validation error, 3 predictor/protocol error, 4 numerical failure.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click
import httpx
import pydantic

from .config import build_config

_EXIT_BY_CATEGORY = {"validation": 2, "predictor": 3, "numerical": 4}


def _post(path: str, payload: dict, server: str | None) -> httpx.Response:
    async def go():
        if server:
            transport = None
            base_url = server.rstrip("/")
        else:
            from .service import app

            transport = httpx.ASGITransport(app=app)
            base_url = "http://voxshap.local"
        async with httpx.AsyncClient(transport=transport, base_url=base_url, timeout=None) as client:
            return await client.post(path, json=payload)

    try:
        return asyncio.run(go())
    except httpx.HTTPError as e:
        click.echo(f"error: cannot reach service: {e}", err=True)
        sys.exit(1)


def _finish(response: httpx.Response) -> None:
    try:
        body = response.json()
    except json.JSONDecodeError:
        click.echo(f"error: non-JSON response (HTTP {response.status_code})", err=True)
        sys.exit(1)
    if response.status_code == 200:
        click.echo(json.dumps(body, indent=2, sort_keys=True))
        return
    error = body.get("error")
    if isinstance(error, dict):
        click.echo(f"error [{error.get('category')}]: {error.get('message')}", err=True)
        sys.exit(int(error.get("exit_code", 1)))
    # FastAPI request validation (bad payload shapes) counts as validation
    if response.status_code == 422:
        click.echo(f"error [validation]: {json.dumps(body)}", err=True)
        sys.exit(2)
    click.echo(f"error: HTTP {response.status_code}: {json.dumps(body)}", err=True)
    sys.exit(1)


def _parse_patch(_ctx, _param, value):
    if value is None:
        return None
    try:
        parts = tuple(int(p) for p in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected PX,PY,PZ integers, got {value!r}")
    if len(parts) != 3:
        raise click.BadParameter(f"expected three components, got {value!r}")
    return parts


def _load_config_file(path: str | None) -> dict | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise click.UsageError(f"config file not found: {p}")
    return json.loads(p.read_text())


def _build_config(kwargs: dict):
    file_values = _load_config_file(kwargs.pop("config"))
    patch = kwargs.pop("patch")
    overrides = {
        "volume": kwargs.pop("volume"),
        "labels": kwargs.pop("labels"),
        "roi": kwargs.pop("roi"),
        "out_dir": kwargs.pop("out"),
        "predictor": kwargs.pop("predictor"),
        "masking_hu": kwargs.pop("masking_hu"),
        "workers": kwargs.pop("workers"),
        "curve_max_steps": kwargs.pop("max_steps", None),
        "units": {
            "kind": kwargs.pop("units"),
            "scale_mm": kwargs.pop("scale_mm"),
            "min_fragment": kwargs.pop("min_fragment"),
        },
        "score": {
            "kind": kwargs.pop("score"),
            "target_class": kwargs.pop("target_class"),
        },
        "shap": {
            "budget": kwargs.pop("budget"),
            "seed": kwargs.pop("seed"),
            "holdout": kwargs.pop("holdout"),
            "ridge": kwargs.pop("ridge"),
        },
        "infer": {
            "patch": list(patch) if patch else None,
            "overlap": kwargs.pop("overlap"),
            "sigma_scale": kwargs.pop("sigma_scale"),
        },
    }
    curve_scores = kwargs.pop("curve_score", None)
    if curve_scores:
        overrides["curve_scores"] = list(curve_scores)
    try:
        return build_config(file_values, overrides)
    except pydantic.ValidationError as e:
        raise click.UsageError(f"invalid configuration:\n{e}")


def common_options(fn):
    options = [
        click.option("--config", type=str, default=None, help="JSON config file; flags override it."),
        click.option("--server", type=str, default=None, help="Remote service URL (default: run in-process)."),
        click.option("--volume", type=str, default=None, help="Input CT volume (VRAW sidecar path)."),
        click.option("--labels", type=str, default=None, help="Organ label map (VRAW)."),
        click.option("--roi", type=str, default=None, help="ROI mask (VRAW)."),
        click.option("--units", type=click.Choice(["organs", "fcc", "hybrid"]), default=None),
        click.option("--scale-mm", type=float, default=None, help="FCC lattice pitch in mm."),
        click.option("--min-fragment", type=int, default=None, help="Merge hybrid fragments below this voxel count."),
        click.option("--score", type=click.Choice(["tp", "fp", "dice", "softdice"]), default=None),
        click.option("--target-class", type=int, default=None),
        click.option("--budget", type=int, default=None, help="Coalition evaluations for KernelSHAP."),
        click.option("--seed", type=int, default=None),
        click.option("--holdout", type=float, default=None),
        click.option("--ridge", type=float, default=None),
        click.option("--patch", type=str, default=None, callback=_parse_patch, help="PX,PY,PZ"),
        click.option("--overlap", type=float, default=None),
        click.option("--sigma-scale", type=float, default=None),
        click.option("--predictor", type=str, default=None, help="'synthetic' or 'exec:<command>'."),
        click.option("--masking-hu", type=float, default=None),
        click.option("--workers", type=int, default=None),
        click.option("--out", type=str, default=None, help="Output directory."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """KernelSHAP attributions for patch-based 3D segmentation."""


@main.command()
@common_options
def partition(server, **kwargs):
    """Partition the receptive-field crop into interpretable units."""
    cfg = _build_config(kwargs)
    _finish(_post("/v1/partition", {"config": cfg.model_dump()}, server))


@main.command()
@common_options
def attribute(server, **kwargs):
    """Compute KernelSHAP attributions over interpretable units."""
    cfg = _build_config(kwargs)
    _finish(_post("/v1/attribute", {"config": cfg.model_dump()}, server))


@main.command()
@common_options
@click.option("--attribution", type=str, required=True, help="attribution.json from 'attribute'.")
@click.option("--curve-score", type=click.Choice(["tp", "fp", "dice", "softdice"]), multiple=True,
              help="Score kind(s) to evaluate curves under (default: the config's score).")
@click.option("--max-steps", type=int, default=None, help="Deletion steps cap for large M.")
def curves(server, attribution, **kwargs):
    """MoRF/LeRF deletion curves and AOPC/ABPC metrics."""
    cfg = _build_config(kwargs)
    _finish(_post("/v1/curves", {"config": cfg.model_dump(), "attribution": attribution}, server))


@main.command()
@common_options
@click.option("--budgets", type=str, required=True, help="Comma-separated ascending budgets.")
def convergence(server, budgets, **kwargs):
    """Surrogate stability diagnostics across sampling budgets."""
    cfg = _build_config(kwargs)
    try:
        budget_list = [int(b) for b in budgets.split(",")]
    except ValueError:
        raise click.BadParameter(f"--budgets expects integers, got {budgets!r}")
    _finish(_post("/v1/convergence", {"config": cfg.model_dump(), "budgets": budget_list}, server))


@main.command("cache-stats")
@common_options
@click.option("-n", "--coalitions", type=int, default=100, help="Random coalitions to measure.")
def cache_stats(server, coalitions, **kwargs):
    """Measure cache hit rates over random coalitions."""
    cfg = _build_config(kwargs)
    _finish(_post("/v1/cache-stats", {"config": cfg.model_dump(), "n_coalitions": coalitions}, server))


@main.command()
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8440)
def serve(host, port):
    """Run the voxshap HTTP service."""
    import uvicorn

    uvicorn.run("voxshap.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
