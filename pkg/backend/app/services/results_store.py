"""
Results store: one directory per run under ``results_dir``.

  store = ResultsStore()                       # results_dir from settings
  out = store.save(table, config)              # <results_dir>/<config.name>/
  store.load(config.name)                      # ResultsTable back from rows.csv
  out / "rows.csv", out / "aggregate.csv", out / "config.json"

CSV files are written with full float precision and a fixed column order, so
reruns of the same config produce the same bytes (apart from wall_ms).
"""
import json
import logging
from pathlib import Path
from typing import Optional, Union

import pandas as pd

from app.config import get_settings
from app.models.schemas import AggregateRow, ExperimentConfig, ResultRow, ResultsTable

log = logging.getLogger(__name__)

ROW_COLUMNS = ["method", "split", "coverage", "mean_width", "relative_width", "r2", "wall_ms", "status", "tuned", "detail"]
AGGREGATE_COLUMNS = list(AggregateRow.model_fields)
FLOAT_FORMAT = "%.17g"


class ResultsStore:
    def __init__(self, root: Optional[Union[str, Path]] = None):
        self.root = Path(root if root is not None else get_settings().results_dir)

    def run_dir(self, run_name: str) -> Path:
        if not run_name or "/" in run_name or run_name in (".", ".."):
            raise ValueError(f"Invalid run name {run_name!r}")
        return self.root / run_name

    def save(self, table: ResultsTable, config: ExperimentConfig, run_name: Optional[str] = None) -> Path:
        out = self.run_dir(run_name or config.name)
        out.mkdir(parents=True, exist_ok=True)
        rows = pd.DataFrame([r.model_dump() for r in table.rows], columns=ROW_COLUMNS)
        rows.to_csv(out / "rows.csv", index=False, float_format=FLOAT_FORMAT)
        agg = pd.DataFrame([a.model_dump() for a in table.aggregate], columns=AGGREGATE_COLUMNS)
        agg.to_csv(out / "aggregate.csv", index=False, float_format=FLOAT_FORMAT)
        (out / "config.json").write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        log.info("Wrote %d rows and %d aggregate rows to %s", len(table.rows), len(table.aggregate), out)
        return out

    def load(self, run_name: str) -> ResultsTable:
        out = self.run_dir(run_name)
        if not (out / "rows.csv").is_file():
            raise FileNotFoundError(f"No results for run {run_name!r} under {self.root}")
        rows = pd.read_csv(out / "rows.csv", keep_default_na=False, na_values=[""], dtype={"tuned": str, "detail": str})
        rows[["tuned", "detail"]] = rows[["tuned", "detail"]].fillna("")
        agg = pd.read_csv(out / "aggregate.csv", keep_default_na=False, na_values=[""])
        return ResultsTable(
            rows=[ResultRow(**_clean(rec)) for rec in rows.to_dict(orient="records")],
            aggregate=[AggregateRow(**_clean(rec)) for rec in agg.to_dict(orient="records")],
        )


def _clean(record: dict) -> dict:
    """NaN cells (missing optional metrics / empty strings) back to None."""
    return {k: (None if isinstance(v, float) and v != v else v) for k, v in record.items()}
