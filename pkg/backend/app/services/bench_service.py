"""
Experiment runner: repeated seeded splits, every configured method per split,
one result row per (method, split) and a per-method aggregate.

Per split i (seed = base_seed + i):
  1. split into proper-train / calibration / test
  2. standardize all three with statistics of proper-train
  3. cut the tuning slice off proper-train
  4. build each method, evaluate it on test, classify the row (ok/OoT/OoR/error)

Method failures never abort the run; they become sentinel rows.
"""
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, Optional

import numpy as np

from app.config import get_settings
from app.errors import BudgetExceededError, CalibrationError, IntervalBenchError
from app.models.domain import Dataset
from app.models.schemas import AggregateRow, ExperimentConfig, ResultRow, ResultsTable, RunStatus
from app.services import data_service, metrics_service
from app.services.method_registry import MethodContext, get_method
from app.utils import child_seeds

log = logging.getLogger(__name__)

# Out-of-range thresholds
MIN_R2 = -1.0
MAX_WIDTH_RATIO = 100.0

ProgressFn = Callable[[int, int], None]

_METRIC_FIELDS = ("coverage", "mean_width", "relative_width", "r2")


def _split_data(config: ExperimentConfig, ds: Dataset, split: int) -> tuple[MethodContext, Dataset]:
    seed = config.base_seed + split
    triple = data_service.split_indices(ds.n, seed, config.test_frac, config.cal_frac)
    if np.intersect1d(triple.train_idx, triple.cal_idx).size:
        raise CalibrationError(f"Split {split}: calibration rows overlap training rows")

    proper_raw = ds.subset(triple.train_idx)
    scaler = data_service.fit_scaler(proper_raw)
    proper = data_service.apply_scaler(proper_raw, scaler)
    test = data_service.apply_scaler(ds.subset(triple.test_idx), scaler)
    cal = data_service.apply_scaler(ds.subset(triple.cal_idx), scaler) if triple.cal_idx.size else None

    tune_seed, method_seed = child_seeds(seed, 2)
    fit, tune = proper, None
    if config.tuning_frac > 0 and proper.n >= 2:
        rest, hold = data_service.holdout_slice(proper.n, tune_seed, config.tuning_frac)
        if hold.size:
            fit, tune = proper.subset(rest), proper.subset(hold)

    if config.unsafe_train_calibration:
        log.warning("Split %d: calibrating on training data (unsafe mode)", split)
        cal = fit
    full = data_service.concat(fit, cal) if cal is not None and cal is not fit else fit

    ctx = MethodContext(
        fit=fit,
        tune=tune,
        cal=cal,
        full=full,
        alpha=config.alpha,
        seed=method_seed,
        unsafe=config.unsafe_train_calibration,
    )
    return ctx, test


def _classify(row: ResultRow, gap: float) -> ResultRow:
    if row.r2 is not None and row.r2 < MIN_R2:
        return row.model_copy(update={"status": RunStatus.OUT_OF_RANGE.value, "detail": f"r2={row.r2:.3g}"})
    if row.mean_width is not None and row.mean_width > MAX_WIDTH_RATIO * gap:
        return row.model_copy(update={"status": RunStatus.OUT_OF_RANGE.value, "detail": f"mean_width={row.mean_width:.3g}"})
    return row


def run_method(
    label: str,
    name: str,
    params: dict,
    ctx: MethodContext,
    test: Dataset,
    split: int,
    budget_s: float,
) -> ResultRow:
    """Build and evaluate one method on one split; failures become sentinel rows.

    Training loops see the budget as a deadline and stop with OoT as soon as it
    passes; the wall-time check afterwards catches the steps that do not poll it.
    """
    entry = get_method(name)
    start = time.perf_counter()
    ctx = replace(ctx, deadline=time.monotonic() + budget_s)
    try:
        fitted = entry.build(ctx, params)
        report = metrics_service.evaluate(fitted.estimator, test, test.targets, ctx.alpha)
    except BudgetExceededError as exc:
        log.warning("%s split %d out of budget: %s", label, split, exc)
        return ResultRow(method=label, split=split, status=RunStatus.OUT_OF_TIME, detail=str(exc),
                         wall_ms=1000.0 * (time.perf_counter() - start))
    except (IntervalBenchError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("%s split %d failed: %s", label, split, exc)
        return ResultRow(method=label, split=split, status=RunStatus.ERROR, detail=f"{type(exc).__name__}: {exc}",
                         wall_ms=1000.0 * (time.perf_counter() - start))
    wall_ms = 1000.0 * (time.perf_counter() - start)
    if wall_ms > 1000.0 * budget_s:
        log.warning("%s split %d took %.1fs (budget %.1fs)", label, split, wall_ms / 1000.0, budget_s)
        return ResultRow(method=label, split=split, status=RunStatus.OUT_OF_TIME, wall_ms=wall_ms,
                         detail=f"wall time {wall_ms / 1000.0:.1f}s > budget {budget_s:.1f}s")

    row = ResultRow(
        method=label,
        split=split,
        coverage=report.coverage,
        mean_width=report.mean_width,
        relative_width=report.relative_width,
        r2=report.r2,
        wall_ms=wall_ms,
        tuned=fitted.tuned,
    )
    return _classify(row, metrics_service.quantile_gap(test.targets, ctx.alpha))


def run_split(config: ExperimentConfig, ds: Dataset, split: int) -> list[ResultRow]:
    budget = config.time_budget_s or get_settings().method_time_budget_s
    ctx, test = _split_data(config, ds, split)
    rows = []
    for spec in config.methods:
        rows.append(run_method(spec.row_label, spec.name, spec.params, ctx, test, split, budget))
    log.info("Split %d done (%d methods)", split, len(rows))
    return rows


def run(
    config: ExperimentConfig,
    *,
    dataset: Optional[Dataset] = None,
    progress: Optional[ProgressFn] = None,
) -> ResultsTable:
    """Run every split; splits may execute concurrently, rows are ordered by (split, method)."""
    for spec in config.methods:
        get_method(spec.name)
    ds = dataset if dataset is not None else data_service.load_dataset(config.data)
    workers = config.max_workers or get_settings().max_workers
    log.info(
        "Running %s: n=%d d=%d, %d methods x %d splits (workers=%d)",
        config.name, ds.n, ds.d, len(config.methods), config.n_splits, workers,
    )

    done = 0
    lock = threading.Lock()

    def one(split: int) -> list[ResultRow]:
        nonlocal done
        rows = run_split(config, ds, split)
        with lock:
            done += 1
            if progress is not None:
                progress(done, config.n_splits)
        return rows

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_split = list(pool.map(one, range(config.n_splits)))
    else:
        per_split = [one(i) for i in range(config.n_splits)]

    rows = [row for split_rows in per_split for row in split_rows]
    return ResultsTable(rows=rows, aggregate=aggregate(rows))


def _included(row: ResultRow) -> bool:
    if row.status != RunStatus.OK.value:
        return False
    return row.coverage is not None and row.mean_width is not None and math.isfinite(row.mean_width)


def _stats(values: list[Optional[float]]) -> tuple[Optional[float], Optional[float]]:
    present = np.array([v for v in values if v is not None], dtype=np.float64)
    if present.size == 0:
        return None, None
    return float(present.mean()), float(present.std())


def aggregate(rows: list[ResultRow]) -> list[AggregateRow]:
    """Per-method mean and population std; sentinel and unbounded rows are excluded and counted."""
    methods: dict[str, list[ResultRow]] = {}
    for row in rows:
        methods.setdefault(row.method, []).append(row)

    out = []
    for method, group in methods.items():
        kept = [r for r in group if _included(r)]
        values = {"method": method, "n_rows": len(kept), "n_excluded": len(group) - len(kept)}
        for name in _METRIC_FIELDS:
            values[f"{name}_mean"], values[f"{name}_std"] = _stats([getattr(r, name) for r in kept])
        values["wall_ms_mean"] = _stats([r.wall_ms for r in kept])[0]
        out.append(AggregateRow(**values))
    return out
