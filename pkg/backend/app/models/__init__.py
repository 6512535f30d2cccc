"""
Models package: pydantic schemas (configs, results, API payloads), numeric
domain containers and experiment-config loading.

Schemas (app/models/schemas.py):
  - DataSource, SyntheticSpec, TrainConfig, LossKind, ForestConfig, GPHyper
  - MethodSpec, ExperimentConfig
  - ResultRow, AggregateRow, ResultsTable, MetricsReport

Domain containers (app/models/domain.py):
  - Dataset, ScalerParams, SplitTriple, Interval, CalibrationRecord, IntervalEstimator

Experiment config (app/models/experiment_config.py):
  - load_config, parse_config, merge_overrides
"""
from app.models import schemas
from app.models.domain import (
    CalibrationRecord,
    Dataset,
    Interval,
    IntervalEstimator,
    ScalerParams,
    SplitTriple,
)
from app.models.experiment_config import load_config, merge_overrides, parse_config

__all__ = [
    "CalibrationRecord",
    "Dataset",
    "Interval",
    "IntervalEstimator",
    "ScalerParams",
    "SplitTriple",
    "load_config",
    "merge_overrides",
    "parse_config",
    "schemas",
]
