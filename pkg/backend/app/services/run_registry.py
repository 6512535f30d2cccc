"""In-process registry of benchmark runs started over HTTP (state lives in process memory)."""

import threading
import uuid
from dataclasses import dataclass, field
from typing import Optional

from app.models.schemas import ResultsTable, RunStatusResponse


@dataclass
class RunRecord:
    run_id: str
    name: str
    status: str = "running"  # running | completed | failed
    progress_percent: int = 0
    error: Optional[str] = None
    output_dir: Optional[str] = None
    table: Optional[ResultsTable] = field(default=None, repr=False)

    def to_response(self) -> RunStatusResponse:
        return RunStatusResponse(
            run_id=self.run_id,
            status=self.status,
            progress_percent=self.progress_percent,
            error=self.error,
            output_dir=self.output_dir,
        )


class RunRegistry:
    def __init__(self) -> None:
        self._runs: dict[str, RunRecord] = {}
        self._lock = threading.Lock()

    def create(self, name: str) -> RunRecord:
        record = RunRecord(run_id=uuid.uuid4().hex, name=name)
        with self._lock:
            self._runs[record.run_id] = record
        return record

    def get(self, run_id: str) -> Optional[RunRecord]:
        with self._lock:
            return self._runs.get(run_id)

    def update(self, run_id: str, **changes) -> RunRecord:
        with self._lock:
            record = self._runs[run_id]
            for key, value in changes.items():
                setattr(record, key, value)
            return record


_registry: Optional[RunRegistry] = None


def get_run_registry() -> RunRegistry:
    """Return the process-wide registry."""
    global _registry
    if _registry is None:
        _registry = RunRegistry()
    return _registry


def reset_run_registry() -> None:
    global _registry
    _registry = None
