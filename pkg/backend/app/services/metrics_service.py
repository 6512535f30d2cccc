"""Test-set evaluation: coverage, mean width, R² and width relative to the featureless interval."""

import math
from typing import Optional

import numpy as np

from app.models.domain import Dataset, IntervalEstimator
from app.models.schemas import MetricsReport
from app.services.interval_service import unconditional_quantiles


def _non_empty(test: Dataset) -> None:
    if test.n == 0:
        raise ValueError("Test set is empty")


def coverage_of(lower: np.ndarray, upper: np.ndarray, y: np.ndarray) -> float:
    """Closed-interval containment rate."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] == 0:
        raise ValueError("Test set is empty")
    covered = int(np.count_nonzero((lower <= y) & (y <= upper)))
    return covered / y.shape[0]


def mean_width_of(lower: np.ndarray, upper: np.ndarray) -> float:
    widths = np.asarray(upper, dtype=np.float64) - np.asarray(lower, dtype=np.float64)
    if widths.shape[0] == 0:
        raise ValueError("Test set is empty")
    if np.any(np.isinf(widths)):
        return math.inf
    return float(np.mean(widths))


def quantile_gap(targets_all: np.ndarray, alpha: float) -> float:
    lo, hi = unconditional_quantiles(targets_all, alpha)
    gap = hi - lo
    if not gap > 0 or math.isinf(gap):
        raise ValueError(f"Unconditional quantile gap must be finite and positive, got {gap}")
    return gap


def coverage(est: IntervalEstimator, test: Dataset) -> float:
    _non_empty(test)
    lower, upper = est.predict_intervals(test.features)
    return coverage_of(lower, upper, test.targets)


def mean_width(est: IntervalEstimator, test: Dataset) -> float:
    _non_empty(test)
    return mean_width_of(*est.predict_intervals(test.features))


def r2(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if predictions.shape != targets.shape or targets.shape[0] == 0:
        raise ValueError(f"r2 needs equal non-empty lengths, got {predictions.shape} and {targets.shape}")
    sst = float(np.sum((targets - targets.mean()) ** 2))
    if sst == 0:
        raise ValueError("r2 is undefined for constant targets")
    sse = float(np.sum((targets - predictions) ** 2))
    return 1.0 - sse / sst


def relative_width(est: IntervalEstimator, test: Dataset, targets_all: np.ndarray, alpha: float) -> float:
    return mean_width(est, test) / quantile_gap(targets_all, alpha)


def evaluate(
    est: IntervalEstimator,
    test: Dataset,
    targets_all: Optional[np.ndarray] = None,
    alpha: Optional[float] = None,
) -> MetricsReport:
    """All metrics from a single pass over the test features."""
    _non_empty(test)
    alpha = est.alpha if alpha is None else alpha
    lower, upper = est.predict_intervals(test.features)
    width = mean_width_of(lower, upper)
    rel = None
    if targets_all is not None:
        rel = width / quantile_gap(targets_all, alpha)
    score = None
    if est.has_point and np.ptp(test.targets) > 0:
        score = r2(est.predict_point(test.features), test.targets)
    return MetricsReport(
        coverage=coverage_of(lower, upper, test.targets),
        mean_width=width,
        relative_width=rel,
        r2=score,
        n_test=test.n,
    )
