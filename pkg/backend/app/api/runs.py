"""Benchmark runs over HTTP.

Endpoints:
  POST /api/runs                  -- validate an ExperimentConfig, start it in the background
  GET  /api/runs/{run_id}         -- status and progress
  GET  /api/runs/{run_id}/results -- result rows + aggregate once completed
"""

import logging
import math
from typing import Any

from fastapi import APIRouter, BackgroundTasks, HTTPException

from app.errors import ConfigError, IntervalBenchError
from app.models.schemas import ExperimentConfig, RunStatusResponse, RunTriggerResponse
from app.services import bench_service
from app.services.method_registry import get_method
from app.services.results_store import ResultsStore
from app.services.run_registry import RunRecord, get_run_registry

log = logging.getLogger(__name__)

router = APIRouter(prefix="/api/runs", tags=["runs"])


def _json_safe(value: Any) -> Any:
    """Non-finite floats (unbounded widths) become strings; JSON has no infinity."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def get_run_or_404(run_id: str) -> RunRecord:
    record = get_run_registry().get(run_id)
    if record is None:
        raise HTTPException(status_code=404, detail=f"Run {run_id} not found")
    return record


def _execute(run_id: str, config: ExperimentConfig) -> None:
    registry = get_run_registry()

    def progress(done: int, total: int) -> None:
        registry.update(run_id, progress_percent=int(100 * done / total))

    try:
        table = bench_service.run(config, progress=progress)
        out = ResultsStore().save(table, config, run_name=f"{config.name}-{run_id[:8]}")
    except (IntervalBenchError, ValueError, OSError) as exc:
        log.exception("Run %s failed: %s", run_id, exc)
        registry.update(run_id, status="failed", error=str(exc))
        return
    registry.update(run_id, status="completed", progress_percent=100, output_dir=str(out), table=table)
    log.info("Run %s completed: %s", run_id, out)


@router.post("", response_model=RunTriggerResponse, status_code=202)
async def trigger_run(config: ExperimentConfig, background_tasks: BackgroundTasks):
    """Start a run. Returns immediately with a run_id to poll."""
    try:
        for spec in config.methods:
            get_method(spec.name)
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    record = get_run_registry().create(config.name)
    background_tasks.add_task(_execute, record.run_id, config)
    return RunTriggerResponse(run_id=record.run_id, status=record.status)


@router.get("/{run_id}", response_model=RunStatusResponse)
async def get_run_status(run_id: str):
    return get_run_or_404(run_id).to_response()


@router.get("/{run_id}/results")
async def get_run_results(run_id: str):
    record = get_run_or_404(run_id)
    if record.status == "failed":
        raise HTTPException(status_code=422, detail=record.error or "Run failed")
    if record.table is None:
        raise HTTPException(status_code=409, detail=f"Run {run_id} is still {record.status}")
    return _json_safe(record.table.model_dump())
