"""HTTP service wrapping the pipeline.

Volumes stay on disk (the service and its clients share a filesystem);
requests carry a RunConfig plus command-specific parameters, responses
carry summaries and the paths of written artifacts. Engine errors map to
stable HTTP statuses and carry the matching CLI exit code so thin clients
can translate failures without parsing messages.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, pipeline
from .config import RunConfig
from .errors import VoxshapError

_STATUS_BY_CATEGORY = {"validation": 400, "predictor": 502, "numerical": 500, "internal": 500}


class PartitionRequest(BaseModel):
    config: RunConfig


class AttributeRequest(BaseModel):
    config: RunConfig


class CurvesRequest(BaseModel):
    config: RunConfig
    attribution: str  # path to an attribution.json written by /attribute


class ConvergenceRequest(BaseModel):
    config: RunConfig
    budgets: list[int] = Field(min_length=1)


class CacheStatsRequest(BaseModel):
    config: RunConfig
    n_coalitions: int = Field(default=100, ge=1)


class HealthResponse(BaseModel):
    status: str
    version: str


class PartitionResponse(BaseModel):
    num_units: int
    unit_voxel_counts: list[int]
    excluded_voxels: int
    crop_dims: list[int]
    unitmap_path: str


class AttributeResponse(BaseModel):
    phi: list[float]
    phi0: float
    v_full: float
    num_units: int
    diagnostics: dict
    cache: dict
    unitmap_hash: str
    attribution_path: str


class CurveMetricsModel(BaseModel):
    aopc: float
    abpc: float
    naopc: float
    nabpc: float
    s_max: float
    s_min: float
    degenerate_range: bool
    normalized_out_of_range: bool = False


class CurvesResponse(BaseModel):
    kinds: list[str]
    metrics: dict[str, CurveMetricsModel]
    csv_paths: dict[str, str]
    cache: dict


class ConvergenceResponse(BaseModel):
    budgets: list[int]
    entries: list[dict]
    num_units: int
    cache: dict


class CacheStatsResponse(BaseModel):
    num_units: int
    mean_hit_rate: float
    expected_speedup: float | None
    predictor_calls: int
    per_coalition_hit_rate: list[float]
    cache_memory_bytes: int


def create_app() -> FastAPI:
    app = FastAPI(title="voxshap", version=__version__)

    @app.exception_handler(VoxshapError)
    async def engine_error(request: Request, exc: VoxshapError):
        return JSONResponse(
            status_code=_STATUS_BY_CATEGORY.get(exc.category, 500),
            content={
                "error": {
                    "category": exc.category,
                    "message": str(exc),
                    "exit_code": exc.exit_code,
                }
            },
        )

    @app.get("/v1/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/v1/partition", response_model=PartitionResponse)
    def partition(req: PartitionRequest):
        summary = pipeline.run_partition(req.config)
        return PartitionResponse(
            num_units=summary["num_units"],
            unit_voxel_counts=summary["unit_voxel_counts"],
            excluded_voxels=summary["excluded_voxels"],
            crop_dims=summary["crop_dims"],
            unitmap_path=summary["unitmap_path"],
        )

    @app.post("/v1/attribute", response_model=AttributeResponse)
    def attribute(req: AttributeRequest):
        payload = pipeline.run_attribute(req.config)
        return AttributeResponse(
            phi=payload["phi"],
            phi0=payload["phi0"],
            v_full=payload["v_full"],
            num_units=payload["num_units"],
            diagnostics=payload["diagnostics"],
            cache=payload["cache"],
            unitmap_hash=payload["unitmap_hash"],
            attribution_path=payload["attribution_path"],
        )

    @app.post("/v1/curves", response_model=CurvesResponse)
    def curves(req: CurvesRequest):
        payload = pipeline.run_curves(req.config, req.attribution)
        return CurvesResponse(
            kinds=payload["kinds"],
            metrics={k: v["metrics"] for k, v in payload["results"].items()},
            csv_paths={k: v["csv_path"] for k, v in payload["results"].items()},
            cache=payload["cache"],
        )

    @app.post("/v1/convergence", response_model=ConvergenceResponse)
    def convergence(req: ConvergenceRequest):
        payload = pipeline.run_convergence(req.config, req.budgets)
        return ConvergenceResponse(
            budgets=payload["budgets"],
            entries=payload["entries"],
            num_units=payload["num_units"],
            cache=payload["cache"],
        )

    @app.post("/v1/cache-stats", response_model=CacheStatsResponse)
    def cache_stats(req: CacheStatsRequest):
        payload = pipeline.run_cache_stats(req.config, req.n_coalitions)
        return CacheStatsResponse(
            num_units=payload["num_units"],
            mean_hit_rate=payload["mean_hit_rate"],
            expected_speedup=payload["expected_speedup"],
            predictor_calls=payload["predictor_calls"],
            per_coalition_hit_rate=payload["per_coalition_hit_rate"],
            cache_memory_bytes=payload["cache_memory_bytes"],
        )

    return app


app = create_app()
