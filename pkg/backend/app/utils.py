"""Shared utilities."""

import json
import time
from typing import Optional

import numpy as np

from app.errors import BudgetExceededError


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for every random draw in the package.

    The bit generator is Philox-4x64 (counter-based, 64-bit outputs), keyed by
    ``seed``. Given the same seed it produces the same stream on every platform,
    which is what makes splits and initializations bit-reproducible.
    """
    if seed < 0:
        raise ValueError(f"Seed must be unsigned, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


def child_seeds(seed: int, count: int) -> list[int]:
    """Draw ``count`` independent 63-bit seeds from the stream keyed by ``seed``."""
    rng = make_rng(seed)
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)]


def parse_key_value(item: str) -> tuple[str, object]:
    """Parse a CLI override ``key=value``; the value is read as JSON when possible.

    ``alpha=0.05`` -> ("alpha", 0.05), ``unsafe_train_calibration=true`` -> (..., True),
    ``synthetic.kind=lognormal_skewed`` -> ("synthetic.kind", "lognormal_skewed").
    """
    if "=" not in item:
        raise ValueError(f"Override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ValueError(f"Empty key in override {item!r}")
    raw = raw.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def check_deadline(deadline: Optional[float], what: str) -> None:
    """Raise BudgetExceededError once ``time.monotonic()`` has passed ``deadline`` (None = no limit)."""
    if deadline is not None and time.monotonic() > deadline:
        raise BudgetExceededError(f"{what} ran past its time budget")
